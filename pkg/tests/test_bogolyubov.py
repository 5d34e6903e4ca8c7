from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from relspec import bogolyubov as bg

PREF = (4 * math.pi) ** -0.5
KS = np.arange(-60, 61)


def shifted_psi(m, mu2=1.0):
    """Ψ(t, s) = (e^{-tm²} − 1)(e^{-sm²} − 1)Θ₋(t+s) on the unit circle."""
    def psi(ts, ss):
        tot = ts[:, None] + ss[None, :]
        theta = np.exp(-np.multiply.outer(tot, KS**2)).sum(-1) * np.exp(-tot * mu2)
        return np.outer(np.expm1(-ts * m * m), np.expm1(-ss * m * m)) * theta
    return psi


# -- kernels ----------------------------------------------------------------------


@pytest.mark.parametrize("t", [0.02, 0.05, 0.1])
def test_h0_small_t_leading_term(t):
    lead = PREF * t**-1.5 * math.exp(-1 / (4 * t))
    assert bg.h_series("0", t)[0] == pytest.approx(lead, rel=1e-15 + math.exp(-2 / t) * 10)


def test_boson_minus_fermion_is_even_subseries():
    t = np.geomspace(0.05, 5.0, 30)
    # termwise: boson and fermion terms differ only at even k, by 2k e^{-k²/4t}
    tb, tf = bg._series_terms("b", t), bg._series_terms("f", t)
    k = np.arange(1, tb.shape[1] + 1)
    expected = np.where(k % 2 == 0, 2 * k, 0)[None, :] * np.exp(-np.outer(1 / (4 * t), k * k))
    assert np.allclose(tb - tf, expected, rtol=1e-15, atol=0)
    # assembled kernels, up to the round-off of the difference
    k2 = 2.0 * np.arange(1, 200)
    even = PREF * t**-1.5 * (k2[None, :] * np.exp(-np.outer(1 / (4 * t), k2 * k2))).sum(axis=1)
    hb = bg.h_series("b", t)
    assert np.all(np.abs(hb - bg.h_series("f", t) - 2 * even) <= 1e-14 * hb)


def test_kernels_positive():
    t = np.linspace(0.05, 1.0, 200)
    for tag in bg.KERNELS:
        assert np.all(bg.h_series(tag, t) > 0)


@pytest.mark.parametrize("tag", bg.KERNELS)
def test_series_matches_principal_value(tag):
    for t in np.geomspace(0.05, 2.0, 9):
        pv = bg.h_integral(tag, t)
        assert bg.h_series(tag, t)[0] == pytest.approx(pv.value, rel=1e-8)
        assert pv.route == "integral"


@pytest.mark.parametrize("tag", bg.KERNELS)
def test_route_switch_at_large_t(tag):
    k = bg.h_kernel(tag, 1.5 * bg.SERIES_MAX_T)
    assert k.route == "integral"
    assert k.value == pytest.approx(bg.h_series(tag, 1.5 * bg.SERIES_MAX_T)[0], rel=1e-8)
    assert bg.h_kernel(tag, 1.0).route == "series"


def test_kernel_argument_errors():
    with pytest.raises(ValueError):
        bg.h_series("x", 1.0)
    with pytest.raises(ValueError):
        bg.h_series("b", 0.0)
    with pytest.raises(ValueError):
        bg.h_kernel("b", 1.0, route="magic")


@pytest.mark.parametrize("tag", bg.KERNELS)
@pytest.mark.parametrize("omega", [0.7, 2.0])
def test_laplace_transform_is_occupation(tag, omega):
    f = lambda t: bg.h_series(tag, t)[0] * math.exp(-t * omega * omega)  # noqa: E731
    val = integrate.quad(f, 0, 1, limit=200)[0] + integrate.quad(f, 1, np.inf, limit=200)[0]
    assert val == pytest.approx(float(bg.occupation(tag, omega)), rel=1e-10)


def test_occupation_closed_forms():
    x = 1.3
    assert bg.occupation("b", x) == pytest.approx(1 / (math.exp(x) - 1))
    assert bg.occupation("f", x) == pytest.approx(1 / (math.exp(x) + 1))
    assert bg.occupation("0", x) == pytest.approx(1 / (2 * math.sinh(x)))
    with pytest.raises(ValueError):
        bg.occupation("q", x)


# -- lattices ------------------------------------------------------------------------


def test_lattice_csv_round_trip():
    lat = bg.TraceLattice.from_function("Psi", shifted_psi(0.7), 1e-3, 60.0, points=21)
    back = bg.TraceLattice.from_csv(lat.to_csv())
    assert back.tag == "Psi"
    assert np.array_equal(back.t, lat.t) and np.array_equal(back.values, lat.values)


def test_lattice_csv_incomplete():
    lat = bg.TraceLattice.from_function("Psi", shifted_psi(0.7), 1e-3, 60.0, points=5)
    text = "\n".join(lat.to_csv().splitlines()[:-1]) + "\n"
    with pytest.raises(ValueError):
        bg.TraceLattice.from_csv(text)


def test_lattice_validation():
    with pytest.raises(ValueError):
        bg.TraceLattice("Psi", [1.0, 2.0], [1.0, 2.0], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        bg.TraceLattice("Psi", [2.0, 1.0], [1.0, 2.0], np.zeros((2, 2)))


def test_lattice_interpolation_exact_on_nodes():
    lat = bg.TraceLattice.from_function("Psi", shifted_psi(0.7), 1e-3, 60.0, points=31)
    assert np.allclose(lat(lat.t, lat.s), lat.values, rtol=1e-14, atol=0)


def test_support_error_low_end():
    lat = bg.TraceLattice.from_function("Psi", shifted_psi(0.7), 0.1, 60.0, points=41)
    with pytest.raises(bg.SupportError) as info:
        bg.bogolyubov_invariant("b", lat, 1.0)
    assert info.value.required[0] == pytest.approx(bg.T_LOW)


def test_support_error_high_end():
    lat = bg.TraceLattice.from_function("Psi", shifted_psi(0.7), 1e-3, 5.0, points=41)
    with pytest.raises(bg.SupportError) as info:
        bg.bogolyubov_invariant("b", lat, 1.0)
    assert info.value.required[1] > 5.0


def test_callable_needs_t_max():
    with pytest.raises(ValueError):
        bg.bogolyubov_invariant("b", shifted_psi(0.7), 1.0)


# -- invariants ----------------------------------------------------------------------


def test_zero_trace_gives_zero():
    zero = lambda ts, ss: np.zeros((len(ts), len(ss)))  # noqa: E731
    for kind in ("b", "f"):
        assert bg.bogolyubov_invariant(kind, zero, 0.8, t_max=50.0).value == 0.0


@pytest.mark.parametrize("beta", [0.5, 1.0])
def test_lattice_matches_callable(beta):
    psi = shifted_psi(0.7)
    exact = bg.bogolyubov_invariant("b", psi, beta, t_max=60.0)
    lat = bg.TraceLattice.from_function("Psi", psi, 1e-3, 60.0, points=481, method="cubic")
    assert bg.bogolyubov_invariant("b", lat, beta).value == pytest.approx(exact.value, rel=1e-4)
    assert abs(exact.value - exact.coarse) < 1e-6 * abs(exact.value)


def test_shifted_vanishes_with_mass():
    ms = [0.4, 0.2, 0.1, 0.05]
    B = [bg.bogolyubov_invariant("b", shifted_psi(m), 1.0, t_max=60.0).value for m in ms]
    assert all(b > 0 for b in B)
    assert all(b2 < b1 for b1, b2 in zip(B, B[1:]))
    # Ψ is O(m⁴), so halving m divides B by about 16
    ratios = [b1 / b2 for b1, b2 in zip(B, B[1:])]
    assert ratios[-1] == pytest.approx(16.0, rel=0.02)


def test_shifted_matches_trace_formula(pair_factory):
    pair = pair_factory("shifted", grid=256, m=0.7)
    r = bg.bogolyubov_invariant("b", pair.Psi_matrix, 1.0, t_max=60.0)
    assert r.value == pytest.approx(bg.trace_formula(pair, "b", 1.0), rel=1e-6)
    assert r.value == pytest.approx(bg.bogolyubov_invariant("b", shifted_psi(0.7), 1.0, t_max=60.0).value, rel=1e-6)


def test_trace_formula_errors(pair_factory):
    pair = pair_factory("shifted", grid=256, m=0.7)
    with pytest.raises(ValueError):
        bg.trace_formula(pair, "f", 1.0)
    with pytest.raises(ValueError):
        bg.bogolyubov_invariant("x", shifted_psi(0.7), 1.0, t_max=10.0)
    with pytest.raises(ValueError):
        bg.bogolyubov_invariant("b", shifted_psi(0.7), -1.0, t_max=10.0)
