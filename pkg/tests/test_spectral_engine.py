from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relspec import fixtures
from relspec.fit_harness import epsilon_fit, sample_epsilon
from relspec.spectral_engine import (SpectralPair, TraceGrid, TruncationError, assemble_dirac, assemble_laplace,
                                     classical_traces, combined_traces, decompose, dirac_square_defect,
                                     relative_traces)

man64 = fixtures.circle(64)


def low_modes(values, count):
    return np.sort(values)[:count]


def integer_spectrum(fn, kmax=20):
    k = np.arange(-kmax, kmax + 1)
    return np.sort(fn(k))


# -- assembly ---------------------------------------------------------------


def test_free_laplacian_spectrum():
    L = assemble_laplace(fixtures.laplace_1d(man64))
    assert np.abs(L - L.conj().T).max() == 0.0
    w = np.linalg.eigvalsh(L)
    assert np.abs(low_modes(w, 41) - integer_spectrum(lambda k: k**2.0)).max() < 1e-10


@pytest.mark.parametrize("a", [0.2, -0.35])
def test_twisted_laplacian_spectrum(a):
    w = np.linalg.eigvalsh(assemble_laplace(fixtures.laplace_1d(man64, a=a)))
    assert np.abs(low_modes(w, 41) - integer_spectrum(lambda k: (k + a) ** 2)).max() < 1e-10


def test_potential_shifts_spectrum():
    w0 = np.linalg.eigvalsh(assemble_laplace(fixtures.laplace_1d(man64)))
    w1 = np.linalg.eigvalsh(assemble_laplace(fixtures.laplace_1d(man64, q=0.7)))
    assert np.abs(w1 - w0 - 0.7).max() < 1e-10


def test_dirac_spectrum_with_mass_term():
    s = 0.8
    w = np.linalg.eigvalsh(assemble_dirac(fixtures.dirac_1d(man64, s=s)))
    pos = low_modes(w[w > 0], 41)
    assert np.abs(pos - integer_spectrum(lambda k: np.sqrt(k**2 + s * s))).max() < 1e-10
    assert np.abs(np.sort(-w[w < 0])[:41] - pos).max() < 1e-10


def test_dirac_spectrum_symmetric_without_s():
    w = np.linalg.eigvalsh(assemble_dirac(fixtures.dirac_1d(man64)))
    assert np.abs(np.sort(w) - np.sort(-w)).max() < 1e-10


def test_dirac_spectrum_twisted():
    s, a = 0.8, 0.3
    w = np.linalg.eigvalsh(assemble_dirac(fixtures.dirac_1d(man64, s=s, a=a)))
    pos = low_modes(w[w > 0], 41)
    assert np.abs(pos - integer_spectrum(lambda k: np.sqrt((k + a) ** 2 + s * s))).max() < 1e-10


def test_dirac_square_matches_laplace():
    D = fixtures.dirac_1d(man64, lambda x: 1.0 + 0.3 * np.cos(x), 0.5, 0.2)
    assert dirac_square_defect(D) < 1e-9


# -- decompositions and overlaps ---------------------------------------------


def test_decomposition_invariants():
    dec = decompose(fixtures.variable_metric_pair(128)[0])
    assert dec.residual < 1e-11 and dec.gram_defect < 1e-10
    assert np.all(np.diff(dec.eigenvalues) >= 0)
    assert dec.eigenvalues[0] > 0


def test_identical_operators_overlap_within_degenerate_blocks():
    pair = SpectralPair(*(decompose(fixtures.laplace_1d(man64, q=1.0)),) * 2)
    lam = pair.plus.lam
    same = np.abs(lam[:, None] - lam[None, :]) < 1e-8
    assert np.abs(pair.P2[~same]).max() < 1e-12
    assert np.allclose(pair.P2.sum(axis=1), 1.0, atol=1e-12)


def test_commuting_constant_pair_shares_plane_waves():
    pair = SpectralPair(*[decompose(g) for g in fixtures.two_scale_pair(64)])
    k = np.fft.fftfreq(64, d=1 / 64)
    k[32] = 32  # the +N/2 convention of the discretization
    lp, lm = (k + 0.2) ** 2 + 0.3, 4 * (k - 0.35) ** 2 + 0.8
    for t, s in ((0.3, 0.5), (1.0, 0.1)):
        assert pair.X(t, s) == pytest.approx(np.sum(np.exp(-t * lp - s * lm)), rel=1e-12)


def test_generic_pair_completeness(pair_factory):
    pair = pair_factory("variable-metric", grid=256)
    rows, cols = pair.completeness()
    assert np.abs(rows - 1).max() < 1e-6 and np.abs(cols - 1).max() < 1e-6


# -- classical traces ---------------------------------------------------------


def test_theta_at_one_vs_jacobi_theta(pair_factory):
    dec = pair_factory("unit-circle", grid=64, q=0.0).plus
    # Jacobi triple product: θ3(0, q) = Π (1 − q^{2m})(1 + q^{2m−1})², q = e^{-1}
    m = np.arange(1, 60)
    q = math.exp(-1.0)
    ref = float(np.prod((1 - q ** (2 * m)) * (1 + q ** (2 * m - 1)) ** 2))
    val = classical_traces(dec, [1.0])["Theta"].values[0]
    assert val == pytest.approx(ref, rel=1e-14)
    assert val == pytest.approx(1.7726372, abs=1e-7)


def test_small_time_weyl_limit(pair_factory):
    dec = pair_factory("unit-circle", grid=512, q=0.0).plus
    t = 1e-3
    val = classical_traces(dec, [t])["Theta"].values[0]
    assert math.sqrt(4 * math.pi * t) * val == pytest.approx(2 * math.pi, abs=1e-8)


def test_theta_refuses_unresolved_time(pair_factory):
    dec = pair_factory("unit-circle", grid=64).plus
    with pytest.raises(TruncationError, match="cutoff"):
        classical_traces(dec, [1e-4])


def test_eta_trace_vanishes_for_symmetric_spectrum():
    dec = decompose(fixtures.dirac_1d(man64))
    H = classical_traces(dec, [0.1, 0.5, 1.0])["H"].values
    assert np.abs(H).max() < 1e-10


def test_weyl_slope_gives_A1(pair_factory):
    pair = pair_factory("unit-circle", grid=512)
    eps = np.geomspace(1e-3, 1e-2, 10)
    f = epsilon_fit(sample_epsilon(pair, "Theta", 1.0, 0.0, eps), 1, 2)
    assert f.coefficient(0) == pytest.approx(2 * math.pi, rel=1e-3)
    assert f.coefficient(1) == pytest.approx(-2 * math.pi, rel=1e-3)


# -- combined and relative traces -------------------------------------------


def test_equal_operators_X_is_theta(pair_factory):
    pair = pair_factory("unit-circle", grid=128)
    for t, s in itertools.product((0.05, 0.3, 1.0), repeat=2):
        assert abs(pair.X(t, s) - pair.theta("+", t + s)) < 1e-10


def test_shifted_X(pair_factory):
    m = 0.7
    pair = pair_factory("shifted", grid=128, m=m)
    for t, s in itertools.product((0.05, 0.3, 1.0), repeat=2):
        assert abs(pair.X(t, s) - math.exp(-t * m * m) * pair.theta("-", t + s)) < 1e-10


def test_equal_dirac_Y_is_minus_theta_derivative(pair_factory):
    pair = pair_factory("unit-circle-dirac", grid=128)
    h = 1e-4
    for t, s in ((0.3, 0.2), (0.5, 0.5)):
        fd = -(pair.theta("+", t + s + h) - pair.theta("+", t + s - h)) / (2 * h)
        assert pair.Y(t, s) == pytest.approx(fd, rel=1e-7)
        assert pair.Y(t, s) == pytest.approx(-pair.dtheta("+", t + s), rel=1e-12)


def test_X_boundary_values(pair_factory):
    pair = pair_factory("two-scale", grid=128)
    assert pair.X(0.4, 0.0) == pytest.approx(pair.theta("+", 0.4), rel=1e-12)
    assert pair.X(0.0, 0.4) == pytest.approx(pair.theta("-", 0.4), rel=1e-12)


def test_psi_vanishes_at_zero_time(pair_factory):
    pair = pair_factory("variable-metric", grid=128)
    assert abs(pair.Psi(0.4, 0.0)) < 1e-10 * pair.theta("+", 0.4)


def test_relative_traces_equal_pair(pair_factory):
    ts = np.linspace(0.05, 1.0, 5)
    out = relative_traces(pair_factory("unit-circle", grid=256), ts, ts)
    assert np.abs(out["Psi"].values).max() < 1e-10
    out = relative_traces(pair_factory("unit-circle-dirac", grid=128), ts, ts)
    assert np.abs(out["Phi"].values).max() < 1e-10


def test_shifted_psi_closed_form(pair_factory):
    m = 0.7
    pair = pair_factory("shifted", grid=128, m=m)
    for t, s in ((0.1, 0.4), (1.0, 0.7)):
        expected = (math.exp(-t * m * m) - 1) * (math.exp(-s * m * m) - 1) * pair.theta("-", t + s)
        assert pair.Psi(t, s) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("name", ["variable-metric", "two-scale"])
def test_psi_direct_definition(pair_factory, name):
    pair = pair_factory(name, grid=128)
    for t, s in ((0.2, 0.5), (1.0, 1.0)):
        assert pair.Psi(t, s) == pytest.approx(pair.Psi_direct(t, s), abs=1e-12)


def test_X_label_swap(pair_factory):
    pair = pair_factory("variable-metric", grid=128)
    swapped = SpectralPair(pair.minus, pair.plus)
    for t, s in ((0.2, 0.5), (1.0, 0.3)):
        assert swapped.X(t, s) == pytest.approx(pair.X(s, t), rel=1e-12)
        assert pair.X(t, s) > 0


def test_combined_traces_grid_and_tail(pair_factory):
    pair = pair_factory("two-scale-dirac", grid=128)
    ts = np.array([0.1, 0.5])
    out = combined_traces(pair, ts, ts)
    assert isinstance(out["X"], TraceGrid) and out["Y"].values.shape == (2, 2)
    assert np.all(np.isfinite(out["X"].values)) and np.all(out["X"].tail >= 0)
    assert out["Y"].values[1, 0] == pytest.approx(pair.Y(0.5, 0.1), rel=1e-13)
    with pytest.raises(TruncationError):
        combined_traces(pair, [1e-5], [1e-5])


def test_large_time_bottom_overlap(pair_factory):
    pair = pair_factory("variable-metric", grid=128)
    eps, t, s = 50.0, 1.0, 0.7
    lp, lm = pair.plus.lam.min(), pair.minus.lam.min()
    val = pair.X(eps * t, eps * s) * math.exp(eps * (t * lp + s * lm))
    assert val == pytest.approx(pair.bottom_overlap(), rel=1e-6)


# -- generalized traces ---------------------------------------------------------


def test_generalized_traces_reduce(pair_factory):
    pair = pair_factory("two-scale-dirac", grid=128)
    assert pair.V(0.3, 0.5, 0.0, 0.0).real == pytest.approx(pair.X(0.3, 0.5), rel=1e-13)
    assert pair.W("+", 0.3, 0.0).real == pytest.approx(pair.theta("+", 0.3), rel=1e-13)


def test_W_even_for_symmetric_spectrum():
    D = decompose(fixtures.dirac_1d(man64))
    pair = SpectralPair(D, D)
    for a in (0.3, 1.1):
        w = pair.W("+", 0.2, a)
        assert abs(w.imag) < 1e-12
        assert w.real == pytest.approx(pair.W("+", 0.2, -a).real, rel=1e-13)


def test_V_mixed_derivative_is_Y(pair_factory):
    pair = pair_factory("two-scale-dirac", grid=128)
    t, s = 0.4, 0.6

    def mixed(h):
        V = pair.V
        return -(V(t, s, h, h) - V(t, s, h, -h) - V(t, s, -h, h) + V(t, s, -h, -h)).real / (4 * h * h)

    h = 1e-2
    rich = (4 * mixed(h / 2) - mixed(h)) / 3
    assert rich == pytest.approx(pair.Y(t, s), rel=1e-7)


# -- zeta ---------------------------------------------------------------------


def test_zeta_equal_operators(pair_factory):
    pair = pair_factory("unit-circle", grid=256)
    z = pair.zeta(0.8, 0.9)
    assert z.Z_X.real == pytest.approx(np.sum(pair.plus.lam ** -1.7), rel=1e-12)
    assert abs(z.Z_Psi) < 1e-12


def test_zeta_direct_sum(pair_factory):
    pair = pair_factory("unit-circle", grid=256)
    k = np.arange(-100000, 100001, dtype=float)
    ref = np.sum((k**2 + 1) ** -2.0)
    z = pair.zeta(1.0, 1.0)
    assert abs(z.Z_X.real - ref) < z.tail + z.roundoff


def test_zeta_excludes_zero_modes():
    D = decompose(fixtures.dirac_1d(man64))
    z = SpectralPair(D, D).zeta(1.0, 1.0)
    assert z.excluded_plus == 2 and z.excluded_minus == 2
    assert np.isfinite(z.Z_X.real)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.8, 3.0), st.floats(0.8, 3.0))
def test_zeta_four_term_identity(p, q):
    pair = SpectralPair(*[decompose(g) for g in fixtures.variable_metric_pair(64)])
    z = pair.zeta(p, q)
    assert abs(z.Z_Psi - z.Z_Psi_direct) < 1e-12 * max(1.0, abs(z.Z_Psi_direct))
