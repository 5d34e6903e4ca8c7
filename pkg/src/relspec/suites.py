"""Property suites run by ``relspec verify``.

Each suite returns a list of :class:`SuiteRow`; a row passes when
|measured − expected| ≤ tol. The suites use moderate grids so that
``verify all`` finishes in a few minutes on one core.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bogolyubov as bg
from . import fixtures
from . import laplace_asym as la
from . import synge_lab as sl
from .coeff_engine import b_coeffs
from .fit_harness import default_window, epsilon_fit, sample_epsilon
from .spectral_engine import SpectralPair, decompose
from .tensor_core import combine

__all__ = ["SuiteRow", "SUITES", "run_suites", "pair_from_fixture", "ruse_synge_jets"]


@dataclass(frozen=True)
class SuiteRow:
    suite: str
    name: str
    measured: float
    expected: float
    tol: float

    @property
    def error(self) -> float:
        return abs(self.measured - self.expected)

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def format(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag}  [{self.suite}] {self.name:<44s} measured={self.measured:.12g} "
                f"expected={self.expected:.12g} err={self.error:.2e} tol={self.tol:.0e}")


def pair_from_fixture(name: str, **params) -> SpectralPair:
    plus, minus = fixtures.FIXTURES[name](**params)
    return SpectralPair(decompose(plus), decompose(minus, sign="-"))


def ruse_synge_jets(ricci, psi: list) -> list:
    """Jets of (1 − R_{kl}y^ky^l/6)ψ, the normal-coordinate density times ψ."""
    n = len(ricci)
    f = [1.0, np.zeros(n), -np.asarray(ricci, dtype=float) / 3, np.zeros((n,) * 3), np.zeros((n,) * 4)]
    psi = [np.asarray(p, dtype=float) for p in psi] + [np.zeros((n,) * k) for k in range(len(psi), 5)]
    out = []
    for k in range(5):
        acc = np.zeros((n,) * k) if k else 0.0
        for j in range(k + 1):
            term = math.comb(k, j) * np.multiply.outer(f[j], psi[k - j])
            acc = acc + (la.symmetrize_full(term) if k else term)
        out.append(acc if k else float(acc))
    return out


def laplace_suite(tol: float = 1e-10) -> list:
    rows = []
    add = lambda name, m, e, t=tol: rows.append(SuiteRow("laplace", name, float(m), float(e), t))  # noqa: E731
    rng = np.random.default_rng(7)
    A = rng.normal(size=(2, 2))
    G = A @ A.T + 2 * np.eye(2)
    model = la.GaussianModel.from_hessian(G)
    idx = (0, 1, 1, 0, 1, 1)
    add("Wick vs permutation moment", la.gaussian_moment(model, idx), la.symmetrized_moment(model, idx))
    add("Hermite orthogonality k<=3", la.hermite_orthogonality(model, 3).max_error, 0.0)
    p2 = la.symmetrize_full(rng.normal(size=(2, 2)))
    poly = la.Polynomial.from_tensor(p2, 0.5)
    add("flat F1 = G^ij phi_ij", la.flat_expansion(model, [0.0, np.zeros(2), p2], 1)[1],
        np.einsum("ij,ij->", model.Ginv, p2) / math.sqrt(model.det))
    add("Gaussian average vs Gauss-Hermite", la.gaussian_average(model, poly), la.gauss_hermite_average(model, poly))
    S3 = la.symmetrize_full(rng.normal(size=(2, 2, 2)))
    chk = la.symmetrization_identity_check(model, S3)
    add("symmetrization identity", chk.lhs, chk.rhs)
    S4 = la.symmetrize_full(rng.normal(size=(2,) * 4))
    jets = [0.0, np.zeros(2), p2, la.symmetrize_full(rng.normal(size=(2,) * 3)), la.symmetrize_full(rng.normal(size=(2,) * 4))]
    data = la.TaylorData(G, S3, S4, jets)
    add("F2 closed form vs generic expansion", la.morse_expansion(data)["F2"], la.generic_expansion(data)["F2"])
    a = 0.3
    eps = np.geomspace(1e-3, 3e-2, 7)
    q = la.quadrature_oracle(lambda y: y * y + a * y ** 3, lambda y: 1.0, eps, (-1.5, 1.5))
    F = la.morse_expansion(la.TaylorData([[2.0]], [[[6 * a]]], None, [1.0]), (0, 1))
    R = q.values - F["F0"] - eps * F["F1"]
    slope = np.polyfit(np.log(eps), np.log(np.abs(R)), 1)[0]
    add("cubic remainder log-log slope", slope, 2.0, 0.2)
    ricci = la.symmetrize_full(rng.normal(size=(2, 2)))
    psi = [0.0, np.zeros(2), p2, jets[3], jets[4]]
    rs = la.ruse_synge_coefficients(G, ricci, psi)
    gen = la.generic_expansion(la.TaylorData(G, None, None, ruse_synge_jets(ricci, psi), metric=G), 2)
    add("Ruse-Synge c1 (injected curvature)", gen["F1"], rs["c1"])
    add("Ruse-Synge c2 (injected curvature)", gen["F2"], rs["c2"])
    psi1 = [0.8, rng.normal(size=2), p2]
    rs1 = la.ruse_synge_coefficients(G, ricci, psi1)
    gen1 = la.generic_expansion(la.TaylorData(G, None, None, ruse_synge_jets(ricci, psi1), metric=G), 1)
    add("Ruse-Synge c1 with [phi] != 0", gen1["F1"], rs1["c1"])
    return rows


def synge_suite(tol: float = 1e-6) -> list:
    rows = []

    def take(report, label):
        for r in report.rows:
            rows.append(SuiteRow("synge", f"{label}: {r.name}", float(r.error), 0.0, r.tol))

    wavy = sl.MetricPatch.wavy()
    sphere = sl.MetricPatch.sphere()
    take(sl.coincidence_suite(sl.MetricPatch.flat(2, center=(0.3, -0.2)), tol=tol), "flat")
    take(sl.coincidence_suite(wavy, tol=tol), "conformal")
    take(sl.two_metric_tensors(sl.MetricPatch.flat(2, center=(0.3, -0.2)), wavy, tol=tol), "flat|conformal")
    take(sl.transport_suite(wavy, sl.Connection.sample_u1(0), wavy, sl.Connection.sample_u1(1), tol=tol), "U(1)")
    rec = sl.metric_recovery(sphere, sphere.center + np.array([0.03, -0.01]))
    rows.append(SuiteRow("synge", "metric recovery near diagonal", rec.error, 0.0, tol))
    return rows


def spectral_suite(tol: float = 1e-4) -> list:
    rows = []
    add = lambda name, m, e, t: rows.append(SuiteRow("spectral", name, float(m), float(e), t))  # noqa: E731
    eq = pair_from_fixture("unit-circle", grid=128)
    ts = np.linspace(0.05, 1.0, 6)
    add("equal operators: max |Psi|", np.abs(eq.Psi_matrix(ts, ts)).max(), 0.0, 1e-10)
    eqd = pair_from_fixture("unit-circle-dirac", grid=64)
    add("equal operators: max |Phi|", np.abs(eqd.Phi_matrix(ts, ts)).max(), 0.0, 1e-10)
    m = 0.7
    sh = pair_from_fixture("shifted", grid=128, m=m)
    worst = max(abs(sh.X(t, s) - math.exp(-t * m * m) * sh.theta("-", t + s))
                for t, s in itertools.product((0.1, 0.5, 1.0), repeat=2))
    add("shifted: X = exp(-t m^2) Theta_-(t+s)", worst, 0.0, 1e-10)
    plus, minus = fixtures.two_scale_pair(256)
    pair = SpectralPair(decompose(plus), decompose(minus, sign="-"))
    lam = min(pair.plus.resolved, pair.minus.resolved)
    for t, s in ((1.0, 1.0), (0.4, 1.0)):
        fit = epsilon_fit(sample_epsilon(pair, "X", t, s, default_window(lam, t, s, eps_max=3e-3)), 1, 2)
        ref = b_coeffs(combine(plus, minus, t, s, with_v6=False))
        for k in (0, 1):
            r = ref[f"B{k}"].value
            add(f"two-scale B{k}({t:g},{s:g}) fit vs geometric (rel)", fit.coefficient(k) / r, 1.0, tol)
    z = pair.zeta(1.5, 1.5)
    add("zeta: Z_Psi four-term vs direct trace", z.Z_Psi.real, z.Z_Psi_direct.real, max(z.tail, 1e-10))
    for tag in bg.KERNELS:
        dev = max(abs(bg.h_kernel(tag, t).value / bg.h_integral(tag, t).value - 1) for t in np.geomspace(0.05, 2, 7))
        add(f"kernel h_{tag}: series vs principal value (rel)", dev, 0.0, 1e-8)
    r = bg.bogolyubov_invariant("b", sh.Psi_matrix, 1.0, t_max=60.0)
    exact = bg.trace_formula(sh, "b", 1.0)
    add("shifted B_b quadrature vs trace formula (rel)", r.value / exact, 1.0, 1e-6)
    add("shifted B_b step halving (rel)", abs(r.value - r.coarse) / abs(r.value), 0.0, 1e-6)
    return rows


SUITES: dict = {"laplace": laplace_suite, "synge": synge_suite, "spectral": spectral_suite}


def run_suites(names, tolerance: float = None, log: Callable = None) -> list:
    rows = []
    for name in names:
        fn = SUITES[name]
        part = fn() if tolerance is None else fn(tol=tolerance)
        if log is not None:
            for r in part:
                log(r.format())
        rows.extend(part)
    return rows
