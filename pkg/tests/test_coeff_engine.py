from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relspec import fixtures
from relspec.coeff_engine import (W_HESS_COEFFICIENT, b_coeffs, c_coeffs, classical_A, dirac_H, equal_operator_B,
                                  equal_operator_C, phi_coeffs, psi_coeffs, shifted_B, shifted_C)
from relspec.fit_harness import default_window, epsilon_fit, sample_epsilon
from relspec.tensor_core import GeometryError, combine

TWO_PI = 2 * math.pi
man = fixtures.circle(32)


def variable_dirac(grid=64):
    m = fixtures.circle(grid)
    plus = fixtures.dirac_1d(m, lambda x: 1.0 + 0.3 * np.cos(x), 0.5, 0.2)
    minus = fixtures.dirac_1d(m, lambda x: 2.0 + 0.2 * np.sin(x), 0.9, -0.35)
    return plus, minus


# -- classical coefficients ---------------------------------------------------


def test_classical_A_free_circle():
    A = classical_A(fixtures.laplace_1d(man))
    assert A["A0"].value == pytest.approx(TWO_PI, abs=1e-13)
    assert abs(A["A1"].value) < 1e-13


@pytest.mark.parametrize("q", [0.3, -1.2])
def test_classical_A_constant_potential(q):
    assert classical_A(fixtures.laplace_1d(man, q=q))["A1"].value == pytest.approx(-TWO_PI * q, abs=1e-13)


def test_classical_A_dirac_potential_is_s_squared():
    s = 0.8
    A = classical_A(fixtures.dirac_1d(man, s=s))
    assert A["A0"].value == pytest.approx(2 * TWO_PI, abs=1e-13)
    assert A["A1"].value == pytest.approx(-TWO_PI * 2 * s * s, abs=1e-12)


def test_dirac_H_traceless_and_zero():
    H = dirac_H(fixtures.dirac_1d(man, s=0.8))
    assert abs(H["H0"].value) < 1e-14
    H = dirac_H(fixtures.dirac_1d(man))
    assert abs(H["H0"].value) < 1e-14 and abs(H["H1"].value) < 1e-14


def test_dirac_H1_constant_fixture():
    D = fixtures.dirac_1d(man, c=2.0, s=0.8, m=0.3)
    S = D.dirac.S
    expected = -man.integrate(D.sqrt_det * np.real(np.trace(S @ S @ S, axis1=1, axis2=2)))
    assert dirac_H(D)["H1"].value == pytest.approx(expected, abs=1e-13)


def test_dirac_H_needs_dirac_data():
    with pytest.raises(GeometryError):
        dirac_H(fixtures.laplace_1d(man))


# -- B coefficients ---------------------------------------------------------


def test_b0_is_fiber_dimension():
    plus, minus = fixtures.variable_metric_pair(64)
    rep = b_coeffs(combine(plus, minus, 0.3, 0.8, with_v6=False))
    assert np.all(rep["b0"].density == 1.0)


@pytest.mark.parametrize("t, s", [(1.0, 1.0), (0.3, 0.8)])
def test_equal_operators_B(t, s):
    L = fixtures.laplace_1d(fixtures.circle(64), lambda x: 1.0 + 0.3 * np.cos(x), 0.4, 0.1)
    ref = equal_operator_B(classical_A(L), 1, t, s)
    rep = b_coeffs(combine(L, L, t, s, with_v6=False))
    for k in (0, 1):
        assert rep[f"B{k}"].value == pytest.approx(ref[f"B{k}"], rel=1e-10, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 4.0), st.floats(0.3, 4.0), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-1, 1), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_b1_constant_reduction(cp, cm, qp, qm, ap, am, t, s):
    plus, minus = fixtures.laplace_1d(man, cp, qp, ap), fixtures.laplace_1d(man, cm, qm, am)
    rep = b_coeffs(combine(plus, minus, t, s, with_v6=False))
    alpha = t * cp + s * cm
    b1 = -t * qp - s * qm - t * s * cp * cm * (ap - am) ** 2 / alpha
    assert rep["B1"].value == pytest.approx(TWO_PI * b1 / math.sqrt(alpha), rel=1e-11, abs=1e-12)


def test_b1_subterms_sum_to_value():
    plus, minus = fixtures.variable_metric_pair(64)
    rep = b_coeffs(combine(plus, minus, 0.6, 0.9, with_v6=False))
    assert sum(rep["B1"].subterms.values()) == pytest.approx(rep["B1"].value, rel=1e-12)


def test_w_coefficient_default():
    assert W_HESS_COEFFICIENT == 1.0


# -- C coefficients ---------------------------------------------------------


def test_c0_constant_metrics_example():
    plus, minus = fixtures.dirac_1d(man, 1.0), fixtures.dirac_1d(man, 4.0)
    rep = c_coeffs(combine(plus, minus, 1.0, 1.0))
    # ½ g_11 tr(γ+γ-) = ½ (1/5) tr(σ1 · 2σ1) = 0.4
    assert np.allclose(rep["c0"].density, 0.4, atol=1e-14)
    assert rep["C0"].value == pytest.approx(TWO_PI * 0.4 / math.sqrt(5.0), rel=1e-13)


@pytest.mark.parametrize("t, s", [(1.0, 1.0), (0.3, 0.7)])
def test_equal_dirac_C(t, s):
    D = variable_dirac()[0]
    rep = c_coeffs(combine(D, D, t, s))
    ref = equal_operator_C(classical_A(D), 1, t, s)
    # g_11(t,s) = ĝ_11/(t+s), so c0 = (n/2) tr I/(t+s)
    assert np.allclose(rep["c0"].density, 0.5 * 2 / (t + s), atol=1e-13)
    for k in (0, 1):
        assert rep[f"C{k}"].value == pytest.approx(ref[f"C{k}"], rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("t, s", [(1.0, 1.0), (0.3, 0.7), (1.2, 0.4)])
def test_c1_constant_closed_form(t, s):
    cp, cm, sp, sm, ap, am = 1.0, 4.0, 0.5, 0.9, 0.2, -0.35
    plus, minus = fixtures.two_scale_dirac_pair(32)
    rep = c_coeffs(combine(plus, minus, t, s))
    alpha = t * cp + s * cm
    r = math.sqrt(cp * cm)
    c1 = 2 * sp * sm - (r / alpha) * (t * sp**2 + s * sm**2) - 3 * r * t * s * cp * cm * (ap - am) ** 2 / alpha**2
    assert rep["C0"].value == pytest.approx(TWO_PI * r / alpha**1.5, rel=1e-13)
    assert rep["C1"].value == pytest.approx(TWO_PI * c1 / math.sqrt(alpha), rel=1e-12)


def test_shifted_dirac_geometric_C():
    m, t, s = 0.7, 0.6, 0.9
    plus, minus = fixtures.shifted_dirac_pair(32, m=m)
    rep = c_coeffs(combine(plus, minus, t, s))
    ref = shifted_C(classical_A(minus), 1, t, s, m * m)
    for k in (0, 1):
        assert rep[f"C{k}"].value == pytest.approx(ref[f"C{k}"], rel=1e-12)


def test_c1_subterms_sum_to_value():
    rep = c_coeffs(combine(*variable_dirac(), 0.6, 0.9))
    assert sum(rep["C1"].subterms.values()) == pytest.approx(rep["C1"].value, rel=1e-12)


# -- relative invariants --------------------------------------------------


def test_psi_vanishes_for_equal_operators():
    L = fixtures.laplace_1d(fixtures.circle(64), lambda x: 1.0 + 0.3 * np.cos(x), 0.4, 0.1)
    for v in psi_coeffs(L, L, 0.4, 0.9).values():
        assert abs(v.value) < 1e-12


def test_psi_vanishes_for_shifted_operators():
    # Ψ = (e^{-tm²} − 1)(e^{-sm²} − 1)Θ₋(t+s) starts at order ε²
    plus, minus = fixtures.shifted_pair(32, m=0.7)
    for v in psi_coeffs(plus, minus, 0.4, 0.9).values():
        assert abs(v.value) < 1e-12


@pytest.mark.parametrize("t, s", [(1.0, 1.0), (0.4, 1.3)])
def test_psi0_two_constant_metrics(t, s):
    cp, cm = 1.0, 4.0
    plus, minus = fixtures.laplace_1d(man, cp), fixtures.laplace_1d(man, cm)
    expected = TWO_PI * ((t + s) ** -0.5 * (cp**-0.5 + cm**-0.5) - (t * cp + s * cm) ** -0.5
                         - (s * cp + t * cm) ** -0.5)
    assert psi_coeffs(plus, minus, t, s)["Psi0"].value == pytest.approx(expected, rel=1e-13)


def test_phi_vanishes_for_equal_dirac():
    D = variable_dirac()[0]
    for v in phi_coeffs(D, D, 0.4, 0.9).values():
        assert abs(v.value) < 1e-11


def test_phi0_matches_spectral_fit(pair_factory):
    t, s = 1.0, 0.5
    pair = pair_factory("two-scale-dirac", grid=256)
    lam = min(pair.plus.resolved, pair.minus.resolved)
    f = epsilon_fit(sample_epsilon(pair, "Phi", t, s, default_window(lam, t, s, eps_max=3e-3)), 1, 2)
    ref = phi_coeffs(*fixtures.two_scale_dirac_pair(32), t, s)
    assert f.coefficient(0) == pytest.approx(ref["Phi0"].value, rel=1e-5)


# -- Theorem-level invariants ---------------------------------------------------


@pytest.mark.parametrize("lam", [2.0, 0.5])
def test_homogeneity(lam):
    plus, minus = fixtures.variable_metric_pair(64, c_minus=2.0)
    dplus, dminus = variable_dirac()
    t, s = 0.7, 0.4
    b, bl = (b_coeffs(combine(plus, minus, x * t, x * s, with_v6=False)) for x in (1.0, lam))
    c, cl = (c_coeffs(combine(dplus, dminus, x * t, x * s)) for x in (1.0, lam))
    for k in (0, 1):
        assert np.allclose(bl[f"b{k}"].density, lam**k * b[f"b{k}"].density, rtol=1e-12, atol=1e-13)
        assert np.allclose(cl[f"c{k}"].density, lam ** (k - 1) * c[f"c{k}"].density, rtol=1e-12, atol=1e-13)


def test_exchange_symmetry():
    plus, minus = fixtures.variable_metric_pair(64, c_minus=2.0)
    dplus, dminus = variable_dirac()
    t, s = 0.7, 0.4
    a = b_coeffs(combine(plus, minus, t, s, with_v6=False))
    b = b_coeffs(combine(minus, plus, s, t, with_v6=False))
    c = c_coeffs(combine(dplus, dminus, t, s))
    d = c_coeffs(combine(dminus, dplus, s, t))
    for k in (0, 1):
        assert np.allclose(a[f"b{k}"].density, b[f"b{k}"].density, rtol=1e-12, atol=1e-13)
        assert np.allclose(c[f"c{k}"].density, d[f"c{k}"].density, rtol=1e-12, atol=1e-13)


def test_c1_equal_operator_reduction():
    D = variable_dirac(128)[0]
    t, s = 0.5, 0.8
    A1 = classical_A(D)["A1"].value
    C1 = c_coeffs(combine(D, D, t, s))["C1"].value
    assert C1 == pytest.approx((0.5 - 1) * (t + s) ** -0.5 * A1, rel=1e-10)


def test_shifted_B_closed_form():
    m, t, s = 0.7, 0.6, 0.9
    plus, minus = fixtures.shifted_pair(32, m=m)
    rep = b_coeffs(combine(plus, minus, t, s, with_v6=False))
    ref = shifted_B(classical_A(minus), 1, t, s, m * m)
    for k in (0, 1):
        assert rep[f"B{k}"].value == pytest.approx(ref[f"B{k}"], rel=1e-12)
