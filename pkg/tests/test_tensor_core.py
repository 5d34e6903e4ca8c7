from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relspec import fixtures
from relspec.tensor_core import (GeometryError, ModelManifold, OperatorGeometry, aux_tensors, combine,
                                 combined_connection, combined_metric, covariant_derivative, dual_metric,
                                 effective_potential, noncompat_tensors, s_tensor_k_form, s_tensor_w_form,
                                 sigma_tensors, symmetrize)

man1 = fixtures.circle(32)


def const_pair(c=(1.0, 4.0), q=(0.0, 0.0), a=(0.0, 0.0)):
    return (fixtures.laplace_1d(man1, c[0], q[0], a[0]), fixtures.laplace_1d(man1, c[1], q[1], a[1]))


def variable_pair(grid=64):
    man = fixtures.circle(grid)
    plus = fixtures.laplace_1d(man, lambda x: 1.0 + 0.3 * np.cos(x), 0.3, 0.2)
    minus = fixtures.laplace_1d(man, lambda x: 2.0 + 0.2 * np.sin(2 * x), 0.8, -0.35)
    return plus, minus


def torus_pair(grid=32):
    man = ModelManifold.torus((2 * math.pi, 2 * math.pi), grid)
    x, y = man.coords[:, 0], man.coords[:, 1]
    gp = np.zeros((man.npts, 2, 2))
    gp[:, 0, 0] = 1.0 + 0.2 * np.cos(x)
    gp[:, 1, 1] = 1.0 + 0.1 * np.sin(y)
    gp[:, 0, 1] = gp[:, 1, 0] = 0.1 * np.sin(x + y)
    gm = np.zeros((man.npts, 2, 2))
    gm[:, 0, 0] = 2.0
    gm[:, 1, 1] = 1.5 + 0.2 * np.cos(x - y)
    Ap = np.zeros((man.npts, 2, 1, 1), dtype=complex)
    Ap[:, 0, 0, 0] = 0.3j * np.sin(y)
    Am = np.zeros((man.npts, 2, 1, 1), dtype=complex)
    Am[:, 1, 0, 0] = -0.2j
    plus = OperatorGeometry.laplace(man, gp, connection=Ap, potential=0.2 * np.cos(x))
    minus = OperatorGeometry.laplace(man, gm, connection=Am, potential=0.5)
    return plus, minus


# -- combined and dual metric ---------------------------------------------


def test_combined_metric_example():
    plus, minus = const_pair()
    g_inv, g, gsq = combined_metric(plus, minus, 1.0, 1.0)
    assert np.allclose(g_inv[:, 0, 0], 5.0, atol=1e-14)
    assert np.allclose(g[:, 0, 0], 0.2, atol=1e-14)
    assert np.allclose(gsq, math.sqrt(0.2), atol=1e-14)


def test_combined_metric_limit_is_plus_metric():
    plus, minus = torus_pair()
    _, g, _ = combined_metric(plus, minus, 1.0, 1e-13)
    assert np.abs(g - plus.g_low).max() < 1e-11


def test_combined_metric_doubles():
    plus, minus = torus_pair()
    a, _, _ = combined_metric(plus, minus, 0.3, 0.7)
    b, _, _ = combined_metric(plus, minus, 0.6, 1.4)
    assert np.abs(b - 2 * a).max() < 1e-14


@pytest.mark.parametrize("t, s", [(0.0, 1.0), (1.0, -0.5)])
def test_combined_metric_domain_error(t, s):
    plus, minus = const_pair()
    with pytest.raises(GeometryError):
        combined_metric(plus, minus, t, s)


def test_non_spd_metric_reports_location():
    c = np.ones(man1.npts)
    c[5] = -1.0
    with pytest.raises(GeometryError, match="5"):
        OperatorGeometry.laplace(man1, c)


def test_different_grids_rejected():
    other = fixtures.laplace_1d(fixtures.circle(16))
    with pytest.raises(GeometryError):
        combined_metric(const_pair()[0], other, 1.0, 1.0)


def test_dual_metric_example():
    plus, minus = const_pair()
    G, G_inv = dual_metric(plus, minus, 1.0, 1.0)
    assert np.allclose(G[:, 0, 0], 1.25, atol=1e-14)
    factor = plus.g_low[:, 0, 0] * 5.0 * minus.g_low[:, 0, 0]
    assert np.allclose(factor, 1.25, atol=1e-14)
    assert np.allclose(G_inv[:, 0, 0], 0.8, atol=1e-14)


def test_dual_metric_limit_and_equal_metrics():
    plus, minus = torus_pair()
    G, _ = dual_metric(plus, minus, 1e-13, 1.0)
    assert np.abs(G - plus.g_low).max() < 1e-11
    G, G_inv = dual_metric(plus, plus, 0.3, 0.9)
    assert np.abs(G - 1.2 * plus.g_low).max() < 1e-13
    assert np.abs(G_inv - plus.g_inv / 1.2).max() < 1e-13


# -- connections ----------------------------------------------------------


def test_equal_connections_give_zero_C():
    plus, _ = torus_pair()
    A, Cp, Cm = combined_connection(plus, plus, 0.4, 0.8)
    assert np.abs(A - plus.connection).max() < 1e-14
    assert np.abs(Cp).max() < 1e-14 and np.abs(Cm).max() < 1e-14


def test_arithmetic_mean_connection():
    plus, minus = const_pair(c=(1.0, 1.0), a=(0.3, -0.1))
    A, _, _ = combined_connection(plus, minus, 1.0, 1.0)
    assert np.allclose(A[:, 0, 0, 0], 0.1j, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(-2, 2), st.floats(-2, 2),
       st.floats(0.05, 3.0), st.floats(0.05, 3.0))
def test_connection_identity_random_constants(cp, cm, ap, am, t, s):
    plus, minus = const_pair(c=(cp, cm), a=(ap, am))
    _, Cp, Cm = combined_connection(plus, minus, t, s)
    ident = t * plus.g_inv[:, 0, 0] * Cp[:, 0, 0, 0] + s * minus.g_inv[:, 0, 0] * Cm[:, 0, 0, 0]
    assert np.abs(ident).max() < 1e-14 * max(1.0, cp, cm) * max(1.0, abs(ap), abs(am)) * max(t, s, 1.0)


# -- non-compatibility and Σ tensors ------------------------------------------


def test_constant_metrics_noncompat():
    plus, minus = const_pair()
    nc = noncompat_tensors(plus, minus, 1.0, 1.0)
    for key in ("K_plus", "K_minus", "W_plus", "W_minus", "W_vec", "W_hess"):
        assert np.abs(nc[key]).max() < 1e-13, key
    # g+ = 1, g = 1/5
    assert np.allclose(nc["Ws_plus"], 0.5 * math.log(5.0), atol=1e-14)
    assert np.allclose(nc["Ws_minus"], 0.5 * math.log(5.0 / 4.0), atol=1e-14)


def test_variable_metric_w_scalar_and_gradient():
    man = fixtures.circle(64)
    x = man.coords[:, 0]
    c = 1.0 + 0.3 * np.cos(x)
    plus = fixtures.laplace_1d(man, c)
    minus = fixtures.laplace_1d(man, 1.0)
    t, s = 0.7, 0.4
    nc = noncompat_tensors(plus, minus, t, s)
    expected = 0.5 * np.log((1 / c) * (t * c + s))
    assert np.abs(nc["Ws_plus"] - expected).max() < 1e-13
    assert np.abs(nc["Wv_plus"][:, 0] - man.grad(expected)[:, 0]).max() < 1e-10


def test_equal_metrics_w_scalar():
    plus, _ = torus_pair()
    nc = noncompat_tensors(plus, plus, 0.5, 1.5)
    # g± = (t+s)^n g, hence W± = (n/2) log(t+s)
    assert np.allclose(nc["Ws_plus"], math.log(2.0), atol=1e-13)
    assert np.abs(nc["W_vec"]).max() < 1e-12
    assert np.abs(nc["W_hess"]).max() < 1e-11


def test_k_symmetric_in_last_two_indices():
    plus, minus = torus_pair()
    nc = noncompat_tensors(plus, minus, 0.6, 0.9)
    K = nc["K_plus"]
    assert np.abs(K - np.swapaxes(K, 2, 3)).max() < 1e-12


def test_sigma_tensors_vanish_for_constant_metrics():
    S3, S4 = sigma_tensors(*const_pair(), 1.0, 2.0)
    assert np.abs(S3).max() < 1e-13 and np.abs(S4).max() < 1e-13


def test_sigma3_finite_difference_oracle():
    grid = 256
    plus, minus = variable_pair(grid)
    t, s = 0.7, 0.4
    S3, _ = sigma_tensors(plus, minus, t, s)
    x = plus.manifold.coords[:, 0]
    h = x[1] - x[0]

    def d(f):
        return (np.roll(f, -1) - np.roll(f, 1)) / (2 * h)

    gp, gm = plus.g_low[:, 0, 0], minus.g_low[:, 0, 0]
    g = 1.0 / (t * plus.g_inv[:, 0, 0] + s * minus.g_inv[:, 0, 0])
    Gam = 0.5 / g * d(g)
    Kp = d(gp) - 2 * Gam * gp
    Km = d(gm) - 2 * Gam * gm
    assert np.abs(S3[:, 0, 0, 0] - 1.5 * (s * Kp + t * Km)).max() < 1e-3


def test_s_tensor_w_form_matches_k_form():
    plus, minus = torus_pair()
    nc = noncompat_tensors(plus, minus, 0.6, 0.9)
    man = plus.manifold
    for tag, op in (("plus", plus), ("minus", minus)):
        dK = covariant_derivative(man, nc[f"K_{tag}"], nc["Gamma"], "ddd")
        Sw = s_tensor_w_form(op.g_low, nc[f"W_{tag}"], nc[f"dW_{tag}"])
        Sk = s_tensor_k_form(op.g_inv, nc[f"K_{tag}"], dK)
        assert np.abs(Sw - Sk).max() < 1e-9 * max(1.0, np.abs(Sw).max())


def test_sigma_tensors_totally_symmetric():
    S3, S4 = sigma_tensors(*torus_pair(), 0.6, 0.9)
    assert np.abs(S3 - symmetrize(S3, (1, 2, 3))).max() < 1e-14
    assert np.abs(S4 - symmetrize(S4, (1, 2, 3, 4))).max() < 1e-13


# -- auxiliary tensors and Q --------------------------------------------------


def test_aux_vanish_for_constant_metrics():
    N, M, V6 = aux_tensors(*const_pair(a=(0.1, 0.1)), 0.5, 0.5)
    assert np.abs(N).max() < 1e-13 and np.abs(M).max() < 1e-13 and np.abs(V6).max() < 1e-13


def test_aux_vanish_for_equal_metrics():
    plus, _ = torus_pair()
    N, M, V6 = aux_tensors(plus, plus, 0.5, 0.8)
    assert np.abs(V6).max() < 1e-10
    assert np.abs(N).max() < 1e-10 and np.abs(M).max() < 1e-10


def test_m_tensor_one_dimensional_reduction():
    plus, minus = variable_pair(128)
    t, s = 0.7, 0.4
    cg = combine(plus, minus, t, s, with_v6=False)
    G = cg.G_inv[:, 0, 0]
    W = cg.W_vec[:, 0]
    WW = cg.W_hess[:, 0, 0] + W * W
    S3, S4 = cg.Sigma3[:, 0, 0, 0], cg.Sigma4[:, 0, 0, 0, 0]
    # in one dimension every contraction collapses; counts: 1+2, 2+2+1, 1+4, 2+3+6+12+12
    M = 3 * G**2 * WW - 5 * G**3 * S3 * W - 1.25 * G**3 * S4 + 35 / 12 * G**4 * S3**2
    assert np.abs(cg.M[:, 0, 0] - M).max() < 1e-12 * max(1.0, np.abs(M).max())
    N = 2 * G**2 * W - (5 / 3) * G**3 * S3
    assert np.abs(cg.N[:, 0, 0, 0] - N).max() < 1e-12 * max(1.0, np.abs(N).max())


def test_v6_symmetric_in_last_four():
    cg = combine(*torus_pair(), 0.6, 0.9)
    assert np.abs(cg.V6 - symmetrize(cg.V6, (3, 4, 5, 6))).max() < 1e-13


def test_effective_potential_equal_operators():
    plus, _ = torus_pair()
    Q = effective_potential(plus, plus, 0.3, 0.7)
    assert np.abs(Q - plus.potential).max() < 1e-10


def test_effective_potential_constant_twists():
    t, s, c, qp, qm, ap, am = 0.6, 0.9, 2.0, 0.3, 0.8, 0.4, -0.25
    plus, minus = const_pair(c=(c, c), q=(qp, qm), a=(ap, am))
    Q = effective_potential(plus, minus, t, s)
    expected = t * qp + s * qm + c * t * s * (ap - am) ** 2 / (t + s)
    assert np.allclose(Q[:, 0, 0], expected, atol=1e-13)
    # the same value from −t g+ (C+)² − s g- (C-)²
    _, Cp, Cm = combined_connection(plus, minus, t, s)
    direct = t * qp + s * qm - t * c * Cp[:, 0, 0, 0] ** 2 - s * c * Cm[:, 0, 0, 0] ** 2
    assert np.allclose(Q[:, 0, 0], direct.real, atol=1e-13)


def test_effective_potential_hermitian():
    Q = combine(*torus_pair(), 0.6, 0.9).Q_comb
    assert np.abs(Q - np.conj(np.swapaxes(Q, 1, 2))).max() < 1e-14


# -- invariants -------------------------------------------------------------


@pytest.mark.parametrize("lam", [2.0, 1 / 3])
def test_homogeneity(lam):
    plus, minus = torus_pair()
    t, s = 0.6, 0.9
    a = combine(plus, minus, t, s)
    b = combine(plus, minus, lam * t, lam * s)

    def close(x, y):
        return np.abs(x - y).max() <= 1e-11 * max(1.0, np.abs(y).max())

    assert close(b.g_inv, lam * a.g_inv)
    assert close(b.W_plus, a.W_plus) and close(b.W_minus, a.W_minus)
    assert close(b.A_comb, a.A_comb)
    assert close(b.Sigma3, lam * a.Sigma3) and close(b.Sigma4, lam * a.Sigma4)
    assert close(b.N, lam**-2 * a.N) and close(b.M, lam**-2 * a.M)


def test_exchange_symmetry():
    plus, minus = torus_pair()
    a = combine(plus, minus, 0.6, 0.9)
    b = combine(minus, plus, 0.9, 0.6)
    for x, y in ((a.g, b.g), (a.G, b.G), (a.A_comb, b.A_comb), (a.K_plus, b.K_minus), (a.W_minus, b.W_plus),
                 (a.C_plus, b.C_minus), (a.Sigma3, b.Sigma3), (a.M, b.M)):
        assert np.abs(x - y).max() < 1e-12 * max(1.0, np.abs(x).max())


def test_det_dual_metric_constant_fixture():
    cg = combine(*const_pair(), 0.4, 1.3)
    assert cg.checks["detG_relative_defect"] < 1e-12


def test_det_dual_metric_variable_fixture():
    cg = combine(*torus_pair(), 0.4, 1.3)
    assert cg.checks["detG_relative_defect"] < 1e-12


def test_fields_resolved_spectrally():
    plus, minus = variable_pair(64)
    cg = combine(plus, minus, 0.7, 0.4, with_v6=False)
    for f in (cg.g_inv[:, 0, 0], cg.Sigma3[:, 0, 0, 0], cg.M[:, 0, 0]):
        power = np.abs(np.fft.rfft(f)) ** 2
        assert power[-4:].sum() < 1e-8 * power.sum()


def test_dirac_geometry_rejects_commuting_s():
    man = fixtures.circle(16)
    with pytest.raises(GeometryError, match="anticommute"):
        OperatorGeometry.from_dirac(man, fixtures.PAULI["x"][None], np.ones((man.npts, 1, 1)), fixtures.PAULI["x"])


def test_clifford_relation_checked():
    man = fixtures.circle(16)
    with pytest.raises(GeometryError, match="Clifford"):
        OperatorGeometry.from_dirac(man, 2 * fixtures.PAULI["x"][None], np.ones((man.npts, 1, 1)),
                                    np.zeros((2, 2)))
