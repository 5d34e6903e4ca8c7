"""Numerical laboratory for the world function σ(x,x′).

σ is computed by shooting geodesics (DOP853 with Newton on the initial
tangent). Jacobi fields integrated alongside the geodesic give the second
derivatives σ_{,ij} and σ_{,ij′} analytically, so coincidence limits of
order three and four need only first and second finite differences; every
difference is Richardson-extrapolated over the steps h, h/2, h/4.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .tensor_core import s_tensor_k_form, s_tensor_w_form

__all__ = [
    "MetricPatch",
    "Connection",
    "ShootingError",
    "Geodesic",
    "SigmaPoint",
    "shoot",
    "geodesic_sigma",
    "sigma_point",
    "zeta",
    "parallel_transport",
    "fd_jet",
    "covariant_jet",
    "CheckRow",
    "Report",
    "coincidence_suite",
    "two_metric_tensors",
    "transport_suite",
    "metric_recovery",
    "sym",
]


def sym(T: np.ndarray, axes=None) -> np.ndarray:
    """Average over permutations of ``axes`` (all axes by default)."""
    T = np.asarray(T)
    axes = list(range(T.ndim)) if axes is None else list(axes)
    if len(axes) < 2:
        return T.copy()
    acc = np.zeros_like(T)
    perms = list(itertools.permutations(axes))
    for perm in perms:
        order = list(range(T.ndim))
        for a, b in zip(axes, perm):
            order[a] = b
        acc = acc + np.transpose(T, order)
    return acc / len(perms)


# -- metrics -----------------------------------------------------------------


@dataclass
class MetricPatch:
    """Metric g_{ij}(x) on a coordinate patch with analytic derivatives.

    ``dmetric(x)[k, i, j]`` = ∂_k g_{ij} and ``d2metric(x)[k, l, i, j]`` =
    ∂_k∂_l g_{ij}. ``ricci_exact`` optionally supplies the Ricci tensor in
    closed form for cross-checking.
    """

    n: int
    metric: Callable
    dmetric: Callable
    d2metric: Callable
    center: np.ndarray
    radius: float
    label: str = ""
    ricci_exact: Optional[Callable] = None

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if self.n not in (1, 2) or self.center.shape != (self.n,):
            raise ValueError("patches are one- or two-dimensional")
        w = np.linalg.eigvalsh(self.g(self.center))
        if w.min() <= 0:
            raise ValueError("metric is not positive definite at the patch center")

    # metric data at a point
    def g(self, x) -> np.ndarray:
        return np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float).reshape(self.n, self.n)

    def dg(self, x) -> np.ndarray:
        return np.asarray(self.dmetric(np.asarray(x, dtype=float)), dtype=float).reshape((self.n,) * 3)

    def d2g(self, x) -> np.ndarray:
        return np.asarray(self.d2metric(np.asarray(x, dtype=float)), dtype=float).reshape((self.n,) * 4)

    def christoffel(self, x) -> np.ndarray:
        """Γ[m, i, j] = Γ^m_{ij}."""
        dg = self.dg(x)
        low = 0.5 * (np.einsum("ikj->kij", dg) + np.einsum("jki->kij", dg) - dg)
        return np.einsum("mk,kij->mij", np.linalg.inv(self.g(x)), low)

    def dchristoffel(self, x) -> np.ndarray:
        """dΓ[l, m, i, j] = ∂_l Γ^m_{ij}."""
        g_inv = np.linalg.inv(self.g(x))
        dg = self.dg(x)
        d2 = self.d2g(x)
        low = 0.5 * (np.einsum("ikj->kij", dg) + np.einsum("jki->kij", dg) - dg)
        dlow = 0.5 * (np.einsum("likj->lkij", d2) + np.einsum("ljki->lkij", d2) - d2)
        dginv = -np.einsum("ma,lab,bk->lmk", g_inv, dg, g_inv)
        return np.einsum("lmk,kij->lmij", dginv, low) + np.einsum("mk,lkij->lmij", g_inv, dlow)

    def riemann(self, x) -> np.ndarray:
        """R[i, j, k, l] = R^i_{jkl} = ∂_kΓ^i_{lj} − ∂_lΓ^i_{kj} + Γ^i_{km}Γ^m_{lj} − Γ^i_{lm}Γ^m_{kj}."""
        G = self.christoffel(x)
        dG = self.dchristoffel(x)
        return (np.einsum("kilj->ijkl", dG) - np.einsum("likj->ijkl", dG)
                + np.einsum("ikm,mlj->ijkl", G, G) - np.einsum("ilm,mkj->ijkl", G, G))

    def ricci(self, x) -> np.ndarray:
        return np.einsum("ijil->jl", self.riemann(x))

    # factories
    @classmethod
    def flat(cls, n: int = 2, center=None, radius: float = 0.5, scale: float = 1.0) -> "MetricPatch":
        c = np.zeros(n) if center is None else center
        return cls(n, lambda x: scale * np.eye(n), lambda x: np.zeros((n,) * 3), lambda x: np.zeros((n,) * 4),
                   c, radius, f"flat{n}d", lambda x: np.zeros((n, n)))

    @classmethod
    def line(cls, c: Callable, dc: Callable, d2c: Callable, center=0.0, radius: float = 0.3, label="line"
             ) -> "MetricPatch":
        """1D metric g_{11} = c(x)."""
        return cls(1, lambda x: np.array([[c(x[0])]]), lambda x: np.array([[[dc(x[0])]]]),
                   lambda x: np.array([[[[d2c(x[0])]]]]), np.array([center], dtype=float), radius, label,
                   lambda x: np.zeros((1, 1)))

    @classmethod
    def conformal(cls, u: Callable, du: Callable, d2u: Callable, center, radius: float = 0.3, label="conformal"
                  ) -> "MetricPatch":
        """2D metric e^{2u}δ with ``du`` the gradient and ``d2u`` the Hessian of u."""
        I2 = np.eye(2)

        def metric(x):
            return math.exp(2 * u(x)) * I2

        def dmetric(x):
            return 2 * math.exp(2 * u(x)) * np.einsum("k,ij->kij", np.asarray(du(x)), I2)

        def d2metric(x):
            g = np.asarray(du(x))
            H = np.asarray(d2u(x))
            return 2 * math.exp(2 * u(x)) * np.einsum("kl,ij->klij", H + 2 * np.outer(g, g), I2)

        def ricci(x):
            return -np.trace(np.asarray(d2u(x))) * I2

        return cls(2, metric, dmetric, d2metric, np.asarray(center, dtype=float), radius, label, ricci)

    @classmethod
    def sphere(cls, center=(0.2, -0.1), radius: float = 0.3) -> "MetricPatch":
        """Unit sphere in stereographic coordinates, g = 4(1+|x|²)^{-2}δ."""
        def u(x):
            return math.log(2.0) - math.log1p(x @ x)

        def du(x):
            return -2 * x / (1 + x @ x)

        def d2u(x):
            r = 1 + x @ x
            return -2 * np.eye(2) / r + 4 * np.outer(x, x) / r ** 2

        patch = cls.conformal(u, du, d2u, center, radius, "sphere")
        patch.ricci_exact = lambda x: patch.g(x)
        return patch

    @classmethod
    def wavy(cls, amp: float = 0.2, center=(0.3, -0.2), radius: float = 0.3) -> "MetricPatch":
        """Conformal metric with u = 0.1 + amp·sin x cos y."""
        def u(x):
            return 0.1 + amp * math.sin(x[0]) * math.cos(x[1])

        def du(x):
            return amp * np.array([math.cos(x[0]) * math.cos(x[1]), -math.sin(x[0]) * math.sin(x[1])])

        def d2u(x):
            a, b = -math.sin(x[0]) * math.cos(x[1]), -math.cos(x[0]) * math.sin(x[1])
            return amp * np.array([[a, b], [b, a]])

        return cls.conformal(u, du, d2u, center, radius, "conformal")


@dataclass
class Connection:
    """Matrix connection one-form: ``A(x)[i]`` = 𝒜_i, ``dA(x)[k, i]`` = ∂_k𝒜_i."""

    A: Callable
    dA: Callable
    rank: int

    def at(self, x) -> np.ndarray:
        return np.asarray(self.A(np.asarray(x, dtype=float)), dtype=complex)

    def d_at(self, x) -> np.ndarray:
        return np.asarray(self.dA(np.asarray(x, dtype=float)), dtype=complex)

    def curvature(self, x) -> np.ndarray:
        """ℛ_{ij} = ∂_i𝒜_j − ∂_j𝒜_i + [𝒜_i, 𝒜_j]."""
        A = self.at(x)
        dA = self.d_at(x)
        comm = np.einsum("iab,jbc->ijac", A, A) - np.einsum("jab,ibc->ijac", A, A)
        return dA - np.swapaxes(dA, 0, 1) + comm

    @classmethod
    def trivial(cls, n: int, rank: int = 1) -> "Connection":
        return cls(lambda x: np.zeros((n, rank, rank)), lambda x: np.zeros((n, n, rank, rank)), rank)

    @classmethod
    def u1(cls, a: Callable, da: Callable, n: int) -> "Connection":
        """𝒜_i = i a_i(x) with ``da(x)[k, i]`` = ∂_k a_i."""
        return cls(lambda x: 1j * np.asarray(a(x)).reshape(n, 1, 1),
                   lambda x: 1j * np.asarray(da(x)).reshape(n, n, 1, 1), 1)

    @classmethod
    def sample_u1(cls, which: int = 0) -> "Connection":
        """Two fixed non-flat U(1) connections on the plane."""
        if which == 0:
            a = lambda x: np.array([0.3 * x[1] + 0.1 * math.sin(x[0]), -0.2 * x[0] * x[0]])  # noqa: E731
            da = lambda x: np.array([[0.1 * math.cos(x[0]), -0.4 * x[0]], [0.3, 0.0]])  # noqa: E731
        else:
            a = lambda x: np.array([0.5 * math.cos(x[1]), 0.1 * x[0]])  # noqa: E731
            da = lambda x: np.array([[0.0, 0.1], [-0.5 * math.sin(x[1]), 0.0]])  # noqa: E731
        return cls.u1(a, da, 2)


# -- geodesics -----------------------------------------------------------------


class ShootingError(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass
class Geodesic:
    """Affinely parametrized geodesic x(τ), τ∈[0,1], from x′ = x(0) to x = x(1)."""

    xp: np.ndarray
    x: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    J: np.ndarray
    Jd: np.ndarray
    history: list
    P: Optional[np.ndarray] = None


ODE_RTOL = 1e-13
ODE_ATOL = 1e-15


def _integrate(patch: MetricPatch, xp, v0, conn: Optional[Connection] = None):
    n = patch.n
    r = conn.rank if conn is not None else 0

    def rhs(_tau, y):
        x = y[:n]
        v = y[n:2 * n]
        J = y[2 * n:2 * n + n * n].reshape(n, n)
        Jd = y[2 * n + n * n:2 * n + 2 * n * n].reshape(n, n)
        G = patch.christoffel(x)
        dG = patch.dchristoffel(x)
        acc = -np.einsum("ijl,j,l->i", G, v, v)
        Jdd = -np.einsum("kijl,j,l,kc->ic", dG, v, v, J) - 2 * np.einsum("ijl,j,lc->ic", G, v, Jd)
        out = [v, acc, Jd.ravel(), Jdd.ravel()]
        if r:
            off = 2 * n + 2 * n * n
            P = (y[off:off + r * r] + 1j * y[off + r * r:off + 2 * r * r]).reshape(r, r)
            dP = -np.einsum("i,iab,bc->ac", v, conn.at(x), P)
            out += [dP.real.ravel(), dP.imag.ravel()]
        return np.concatenate(out)

    y0 = [np.asarray(xp, dtype=float), np.asarray(v0, dtype=float), np.zeros(n * n), np.eye(n).ravel()]
    if r:
        y0 += [np.eye(r).ravel(), np.zeros(r * r)]
    sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate(y0), method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL)
    if not sol.success:
        raise ShootingError(f"geodesic integration failed: {sol.message}", [])
    y = sol.y[:, -1]
    x1 = y[:n]
    v1 = y[n:2 * n]
    J = y[2 * n:2 * n + n * n].reshape(n, n)
    Jd = y[2 * n + n * n:2 * n + 2 * n * n].reshape(n, n)
    P = None
    if r:
        off = 2 * n + 2 * n * n
        P = (y[off:off + r * r] + 1j * y[off + r * r:off + 2 * r * r]).reshape(r, r)
    return x1, v1, J, Jd, P


def shoot(patch: MetricPatch, xp, x, tol: float = 1e-12, max_iter: int = 30, conn: Optional[Connection] = None
          ) -> Geodesic:
    """Solve the two-point problem x(0) = x′, x(1) = x by Newton on the initial tangent."""
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = x - xp
    history = []
    for _ in range(max_iter):
        x1, v1, J, Jd, P = _integrate(patch, xp, v, conn)
        res = x - x1
        err = float(np.abs(res).max())
        history.append(err)
        if err <= tol * max(1.0, float(np.abs(x).max())):
            return Geodesic(xp, x, v, v1, J, Jd, history, P)
        v = v + np.linalg.solve(J, res)
    raise ShootingError(f"shooting from {xp} to {x} did not converge", history)


@dataclass
class SigmaPoint:
    """σ and its analytic first and second derivatives at (x, x′)."""

    sigma: float
    d_x: np.ndarray  # σ_{,i}
    d_xp: np.ndarray  # σ_{,i′}
    xi: np.ndarray  # ξ^{i′} = −g^{i′j′}σ_{,j′}
    d2_xx: np.ndarray  # σ_{,ij}
    d2_x_xp: np.ndarray  # [i, j] = σ_{,ij′}
    hj_residual: float
    geodesic: Geodesic


def sigma_point(patch: MetricPatch, x, xp, conn: Optional[Connection] = None) -> SigmaPoint:
    geo = shoot(patch, xp, x, conn=conn)
    gx = patch.g(geo.x)
    gp = patch.g(geo.xp)
    sigma = 0.5 * float(geo.v0 @ gp @ geo.v0)
    d_x = gx @ geo.v1
    d_xp = -gp @ geo.v0
    Jinv = np.linalg.inv(geo.J)
    d2_xx = np.einsum("jik,k->ij", patch.dg(geo.x), geo.v1) + gx @ geo.Jd @ Jinv
    d2_xx = 0.5 * (d2_xx + d2_xx.T)
    d2_x_xp = -(gp @ Jinv).T
    hj = abs(sigma - 0.5 * d_x @ np.linalg.solve(gx, d_x))
    return SigmaPoint(sigma, d_x, d_xp, geo.v0, d2_xx, d2_x_xp, float(hj), geo)


def geodesic_sigma(patch: MetricPatch, x, xp) -> SigmaPoint:
    """σ(x, x′) = ½d², its tangents and the Hamilton–Jacobi residual."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if np.sqrt(np.sum((x - patch.center) ** 2)) > patch.radius * (1 + 1e-12) or \
            np.sqrt(np.sum((xp - patch.center) ** 2)) > patch.radius * (1 + 1e-12):
        raise ValueError("points must lie inside the patch radius")
    return sigma_point(patch, x, xp)


def zeta(patch: MetricPatch, x, xp) -> float:
    """ζ = ½log(g^{-1/2}(x) det(−σ_{,ij′}) g^{-1/2}(x′))."""
    sp = sigma_point(patch, x, xp)
    M = np.linalg.det(-sp.d2_x_xp)
    return 0.5 * math.log(M / math.sqrt(np.linalg.det(patch.g(x)) * np.linalg.det(patch.g(xp))))


def parallel_transport(patch: MetricPatch, conn: Connection, x, xp) -> np.ndarray:
    """𝒫(x, x′) along the geodesic from x′ to x: d𝒫/dτ = −ẋⁱ𝒜_i𝒫, 𝒫(0) = I."""
    return shoot(patch, np.atleast_1d(xp), np.atleast_1d(x), conn=conn).P


# -- finite differences ------------------------------------------------------


@dataclass
class FDJet:
    """Richardson-extrapolated first and second derivatives of an array-valued map."""

    value: np.ndarray
    d1: np.ndarray  # [k, ...]
    d2: Optional[np.ndarray]  # [k, l, ...]
    err1: float
    err2: float
    order1: Optional[float]
    order2: Optional[float]


def _fd_once(F, x0, h, second: bool, f0):
    n = len(x0)
    E = np.eye(n)
    plus = [F(x0 + h * E[k]) for k in range(n)]
    minus = [F(x0 - h * E[k]) for k in range(n)]
    d1 = np.array([(plus[k] - minus[k]) / (2 * h) for k in range(n)])
    if not second:
        return d1, None
    d2 = np.empty((n, n) + np.shape(f0), dtype=np.result_type(f0, float))
    for k in range(n):
        d2[k, k] = (plus[k] - 2 * f0 + minus[k]) / h ** 2
        for l in range(k + 1, n):
            v = (F(x0 + h * (E[k] + E[l])) - F(x0 + h * (E[k] - E[l])) - F(x0 - h * (E[k] - E[l]))
                 + F(x0 - h * (E[k] + E[l]))) / (4 * h * h)
            d2[k, l] = d2[l, k] = v
    return d1, d2


def _order(a, b, c, floor: float = 1e-9):
    e1 = float(np.abs(a - b).max())
    e2 = float(np.abs(b - c).max())
    if e1 < floor or e2 < floor:
        return None
    return math.log2(e1 / e2)


def fd_jet(F: Callable, x0, h: float = 0.02, second: bool = True) -> FDJet:
    """Central differences at h, h/2, h/4 with Richardson extrapolation."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    f0 = np.asarray(F(x0))
    r = [_fd_once(F, x0, h / 2 ** m, second, f0) for m in range(3)]
    d1s = [a for a, _ in r]
    R1a = (4 * d1s[1] - d1s[0]) / 3
    R1b = (4 * d1s[2] - d1s[1]) / 3
    out = FDJet(f0, R1b, None, float(np.abs(R1b - R1a).max()), 0.0, _order(*d1s), None)
    if second:
        d2s = [b for _, b in r]
        R2a = (4 * d2s[1] - d2s[0]) / 3
        R2b = (4 * d2s[2] - d2s[1]) / 3
        out.d2 = R2b
        out.err2 = float(np.abs(R2b - R2a).max())
        out.order2 = _order(*d2s)
    return out


def covariant_jet(f1, f2, f3, f4, Gam, dGam):
    """Coincidence values of ∇_j f, ∇_k∇_j f, ∇_l∇_k∇_j f, ∇_m∇_l∇_k∇_j f for a scalar f.

    Inputs are the partial-derivative jets f_{,j}, f_{,jk}, f_{,jkl}, f_{,jklm}
    at a point together with Γ^m_{ij} and ∂_lΓ^m_{ij} there. Index order of
    the outputs follows the operator order (outermost derivative first).
    The fourth-order value assumes f_{,j} = 0 there (it would otherwise need
    second derivatives of Γ); pass ``f4=None`` to skip it.
    """
    f1 = np.asarray(f1)
    # B[j, i] = ∇_j∇_i f
    B = f2 - np.einsum("mji,m->ji", Gam, f1)
    # ∂_k B_ji = f_ijk − ∂_kΓ^m_ij f_m − Γ^m_ij f_mk
    dB = np.einsum("ijk->kji", f3) - np.einsum("kmji,m->kji", dGam, f1) - np.einsum("mji,mk->kji", Gam, f2)
    C3 = dB - np.einsum("mkj,mi->kji", Gam, B) - np.einsum("mki,jm->kji", Gam, B)
    C4 = None
    if f4 is not None:
        if np.abs(f1).max() > 1e-12:
            raise ValueError("fourth covariant derivative needs f_{,j} = 0")
        # ∂_l∂_k B_ji at f_m = 0
        ddB = (np.einsum("ijkl->lkji", f4) - np.einsum("kmji,ml->lkji", dGam, f2)
               - np.einsum("lmji,mk->lkji", dGam, f2) - np.einsum("mji,mkl->lkji", Gam, f3))
        # ∂_l B_ji = f_jil − Γ^m_ji f_ml
        dBl = dB
        # ∂_l(∇_k B_ji)
        dC3 = (ddB - np.einsum("lmkj,mi->lkji", dGam, B) - np.einsum("mkj,lmi->lkji", Gam, dBl)
               - np.einsum("lmki,jm->lkji", dGam, B) - np.einsum("mki,ljm->lkji", Gam, dBl))
        C4 = (dC3 - np.einsum("mlk,mji->lkji", Gam, C3) - np.einsum("mlj,kmi->lkji", Gam, C3)
              - np.einsum("mli,kjm->lkji", Gam, C3))
    return f1, B, C3, C4


# -- reports -----------------------------------------------------------------


@dataclass
class CheckRow:
    name: str
    measured: list
    expected: list
    error: float
    fd_error: float
    tol: float
    order: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.error <= self.tol

    @property
    def flagged(self) -> bool:
        return self.order is not None and self.order < 1.8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        d["flagged"] = self.flagged
        return d


@dataclass
class Report:
    label: str
    base_point: list
    step: float
    rows: list = field(default_factory=list)

    def add(self, name, measured, expected, tol, fd_error=0.0, order=None):
        m = np.asarray(measured)
        e = np.asarray(expected)
        err = float(np.abs(m - e).max()) if m.size else 0.0
        self.rows.append(CheckRow(name, _jsonable(m), _jsonable(e), err, float(fd_error), tol, order))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"label": self.label, "base_point": self.base_point, "step": self.step, "passed": self.passed,
                "rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format(self) -> str:
        lines = [f"{self.label} at {self.base_point} (h={self.step})"]
        for r in self.rows:
            flag = " (order<1.8)" if r.flagged else ""
            lines.append(f"  {'PASS' if r.passed else 'FAIL'}  {r.name:<34s} err={r.error:.2e} tol={r.tol:.0e}{flag}")
        return "\n".join(lines)


def _jsonable(a: np.ndarray):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}
    return a.tolist()


# -- suites --------------------------------------------------------------------


def coincidence_suite(patch: MetricPatch, xp=None, h: float = 0.02, tol: float = 1e-6) -> Report:
    """Coincidence limits of σ and ζ against their Christoffel/curvature forms."""
    xp = patch.center if xp is None else np.atleast_1d(np.asarray(xp, dtype=float))
    n = patch.n
    g = patch.g(xp)
    Gam = patch.christoffel(xp)
    dGam = patch.dchristoffel(xp)
    dg = patch.dg(xp)
    rep = Report(patch.label, xp.tolist(), h)

    base = sigma_point(patch, xp, xp)
    rep.add("[sigma]", base.sigma, 0.0, tol)
    rep.add("[sigma_,i]", base.d_x, np.zeros(n), tol)
    rep.add("[sigma_,ij] = g", base.d2_xx, g, tol)
    rep.add("[sigma_,ij'] = -g", base.d2_x_xp, -g, tol)

    jx = fd_jet(lambda x: sigma_point(patch, x, xp).d2_xx, xp, h)
    f3 = jx.d1.transpose(1, 2, 0)  # σ_{,ijk}
    f4 = jx.d2.transpose(2, 3, 0, 1)  # σ_{,ijkl}
    rep.add("[sigma_,ijk] = 3/2 g_(ij,k)", f3, 1.5 * sym(dg.transpose(1, 2, 0)), tol, jx.err1, jx.order1)
    rep.add("[sigma_,ijk] = 3 g_m(k Gam^m_ij)", f3, 3 * sym(np.einsum("mk,mij->ijk", g, Gam)), tol, jx.err1)
    dG_k = np.einsum("kmij->mijk", dGam)  # Γ^m_{ij,k}
    exp4 = (4 * sym(np.einsum("ml,mijk->ijkl", g, dG_k)) + 4 * sym(np.einsum("ml,nij,mkn->ijkl", g, Gam, Gam))
            + 3 * sym(np.einsum("nm,nij,mkl->ijkl", g, Gam, Gam)))
    rep.add("[sigma_,ijkl]", f4, exp4, tol, jx.err2, jx.order2)

    jm = fd_jet(lambda x: sigma_point(patch, x, xp).d2_x_xp, xp, h)
    # d2_x_xp[j, i'] differentiated twice in x: [σ_{,i'jkl}] with axes (i, j, k, l)
    mixed = jm.d2.transpose(3, 2, 0, 1)
    exp_m = -sym(np.einsum("ml,mijk->ijkl", g, dG_k)) - sym(np.einsum("ml,nij,mkn->ijkl", g, Gam, Gam))
    # the closed form is totally symmetric; it is the (i'jkl)-symmetrized limit
    rep.add("[sigma_,(i'jkl)]", sym(mixed), exp_m, tol, jm.err2, jm.order2)
    d_s3 = 1.5 * np.einsum("iljk->ijkl", sym(patch.d2g(xp), (1, 2, 3)))
    rep.add("[sigma_,i'jkl] = [sigma_,jkl]_,i - [sigma_,ijkl]", mixed, d_s3 - f4, tol, max(jm.err2, jx.err2))

    # derivative exchange: ∂_j[σ_,ik] = [σ_,ikj] + [σ_,ikj']
    jp = fd_jet(lambda y: sigma_point(patch, xp, y).d2_xx, xp, h, second=False)
    rep.add("[f]_,j = [f_,j] + [f_,j'] (f=sigma_,ik)", f3 + jp.d1.transpose(1, 2, 0), dg.transpose(1, 2, 0), tol,
            max(jx.err1, jp.err1))

    # ζ limits
    jz = fd_jet(lambda x: np.array(zeta(patch, x, xp)), xp, h)
    ric = patch.ricci(xp)
    rep.add("[zeta] = 0", jz.value, 0.0, tol)
    rep.add("[zeta_,i] = 0", jz.d1, np.zeros(n), tol, jz.err1)
    # [∇∇ζ] = [ζ_,ij] because [ζ_,i] = 0
    rep.add("[nabla nabla zeta] = R_ij/6", jz.d2, ric / 6, tol, jz.err2, jz.order2)
    if patch.ricci_exact is not None:
        rep.add("Ricci (Christoffel) = Ricci (closed form)", ric, patch.ricci_exact(xp), 1e-10)

    # identities on an off-diagonal stencil
    hj, nm, symm = [], [], []
    for k in range(n):
        for s in (+1, -1):
            x = xp.copy()
            x[k] += s * 0.5 * patch.radius
            sp = sigma_point(patch, x, xp)
            hj.append(sp.hj_residual)
            gp_res = abs(sp.sigma - 0.5 * sp.d_xp @ np.linalg.solve(patch.g(xp), sp.d_xp))
            hj.append(gp_res)
            gam = np.linalg.inv(sp.d2_x_xp)  # [i', j]
            nm.append(abs(sp.sigma - 0.5 * sp.d_xp @ gam @ sp.d_x))
            symm.append(abs(sp.sigma - sigma_point(patch, xp, x).sigma))
    rep.add("Hamilton-Jacobi residual", max(hj), 0.0, 1e-8)
    rep.add("sigma = 1/2 gamma^{i'j} sigma_,i' sigma_,j", max(nm), 0.0, 1e-8)
    rep.add("sigma(x,x') = sigma(x',x)", max(symm), 0.0, 1e-10)
    return rep


def _sigma_h_jets(patch_h: MetricPatch, xp, h):
    jx = fd_jet(lambda x: sigma_point(patch_h, x, xp).d2_xx, xp, h)
    jm = fd_jet(lambda x: sigma_point(patch_h, x, xp).d2_x_xp, xp, h)
    return jx, jm


def two_metric_tensors(patch_g: MetricPatch, patch_h: MetricPatch, xp=None, h: float = 0.02, tol: float = 1e-6
                       ) -> Report:
    """S, T, V tensors of σ^h under ∇^g against their W- and K-forms."""
    if patch_g.n != patch_h.n:
        raise ValueError("patches have different dimensions")
    xp = patch_g.center if xp is None else np.atleast_1d(np.asarray(xp, dtype=float))
    n = patch_g.n
    Gam = patch_g.christoffel(xp)
    dGam = patch_g.dchristoffel(xp)
    hl = patch_h.g(xp)
    h_inv = np.linalg.inv(hl)
    W = patch_h.christoffel(xp) - Gam  # W^m_{ij}
    dW_part = patch_h.dchristoffel(xp) - dGam  # ∂_l W^m_ij
    # ∇_l W^m_ij
    dW = (dW_part + np.einsum("mla,aij->lmij", Gam, W) - np.einsum("ali,maj->lmij", Gam, W)
          - np.einsum("alj,mia->lmij", Gam, W))
    # K_ijk = ∇^g_i h_jk
    K = patch_h.dg(xp) - np.einsum("mij,mk->ijk", Gam, hl) - np.einsum("mik,jm->ijk", Gam, hl)
    # ∇_a K_ijk from ∂_a K and Γ
    d2h = patch_h.d2g(xp)
    dK_part = (d2h - np.einsum("amij,mk->aijk", dGam, hl) - np.einsum("mij,amk->aijk", Gam, patch_h.dg(xp))
               - np.einsum("amik,jm->aijk", dGam, hl) - np.einsum("mik,ajm->aijk", Gam, patch_h.dg(xp)))
    dK = (dK_part - np.einsum("mai,mjk->aijk", Gam, K) - np.einsum("maj,imk->aijk", Gam, K)
          - np.einsum("mak,ijm->aijk", Gam, K))

    rep = Report(f"{patch_g.label}|{patch_h.label}", xp.tolist(), h)
    jx, jm = _sigma_h_jets(patch_h, xp, h)
    base = sigma_point(patch_h, xp, xp)
    f1 = base.d_x
    f2 = base.d2_xx
    f3 = jx.d1.transpose(1, 2, 0)
    f4 = jx.d2.transpose(2, 3, 0, 1)
    C1, C2, C3, C4 = covariant_jet(f1, f2, f3, f4, Gam, dGam)
    S3 = sym(C3)
    S4 = sym(C4)
    T3 = np.einsum("kji->ijk", C3)
    T4 = sym(np.einsum("lkji->ijkl", C4), (1, 2, 3))
    rep.add("S_i = 0", C1, np.zeros(n), tol)
    rep.add("S_ij = h_ij", C2, hl, tol)
    rep.add("S_ijk = 3 h_m(i W^m_jk)", S3, 3 * sym(np.einsum("mi,mjk->ijk", hl, W)), tol, jx.err1, jx.order1)
    rep.add("S_ijk = 3/2 K_(ijk)", S3, 1.5 * sym(K), tol, jx.err1)
    rep.add("T_ijk = S_ijk", sym(T3, (1, 2)), S3, tol, jx.err1)

    # V tensors: f = σ^h_{,i'} as a scalar in x for each i'
    V2, V3, V4 = [], [], []
    for i in range(n):
        g1 = base.d2_x_xp[:, i]
        g2 = jm.d1[:, :, i].T  # ∂_k σ_{,j i'} → [j, k]
        g3 = jm.d2[:, :, :, i].transpose(2, 0, 1)  # [j, k, l]
        _, B, C3v, _ = covariant_jet(g1, 0.5 * (g2 + g2.T), sym(g3), None, Gam, dGam)
        V2.append(g1)
        V3.append(B)  # [k, j] = ∇_k∇_j σ_{,i'}
        V4.append(C3v)  # [l, k, j]
    V2 = np.array(V2)
    V3 = np.array(V3).transpose(0, 2, 1)
    V4 = sym(np.array(V4).transpose(0, 3, 2, 1), (1, 2, 3))
    rep.add("V_ij = -h_ij", V2, -hl, tol)
    rep.add("V_ijk = -h_mi W^m_kj", sym(V3, (1, 2)), -np.einsum("mi,mkj->ijk", hl, W), tol, jm.err1, jm.order1)

    T4_exp = (3 * sym(np.einsum("mj,kmli->ijkl", hl, dW), (1, 2, 3)) + sym(np.einsum("mi,jmkl->ijkl", hl, dW), (1, 2, 3))
              + 3 * sym(np.einsum("mj,nki,mln->ijkl", hl, W, W), (1, 2, 3))
              + sym(np.einsum("mi,njk,mln->ijkl", hl, W, W), (1, 2, 3))
              + 3 * sym(np.einsum("nm,njk,mli->ijkl", hl, W, W), (1, 2, 3)))
    rep.add("T_ijkl (W-form)", T4, T4_exp, tol, jx.err2, jx.order2)
    V4_exp = -sym(np.einsum("mi,jmkl->ijkl", hl, dW), (1, 2, 3)) - sym(np.einsum("mi,njk,mln->ijkl", hl, W, W), (1, 2, 3))
    rep.add("V_ijkl (W-form)", V4, V4_exp, tol, jm.err2, jm.order2)

    Sw = s_tensor_w_form(hl[None], W[None], dW[None])[0]
    Sk = s_tensor_k_form(h_inv[None], K[None], dK[None])[0]
    rep.add("S_ijkl (W-form)", S4, Sw, tol, jx.err2, jx.order2)
    rep.add("S_ijkl (K-form)", S4, Sk, tol, jx.err2)
    rep.add("S_ijkl W-form = K-form", Sw, Sk, 1e-12)
    return rep


def transport_suite(patch_g: MetricPatch, conn_A: Connection, patch_h: Optional[MetricPatch] = None,
                    conn_B: Optional[Connection] = None, xp=None, h: float = 0.02, tol: float = 1e-6) -> Report:
    """Coincidence limits of parallel transport, single and two-connection."""
    xp = patch_g.center if xp is None else np.atleast_1d(np.asarray(xp, dtype=float))
    n = patch_g.n
    r = conn_A.rank
    I = np.eye(r)
    Gam = patch_g.christoffel(xp)
    A = conn_A.at(xp)
    dA = conn_A.d_at(xp)
    rep = Report(f"transport:{patch_g.label}", xp.tolist(), h)

    def cov2(P0, d1, d2):
        # ∇_i∇_j𝒫 = ∂_i∂_j𝒫 + ∂_i𝒜_j𝒫 + 𝒜_j∂_i𝒫 + 𝒜_i∂_j𝒫 + 𝒜_i𝒜_j𝒫 − Γ^k_ij(∂_k𝒫 + 𝒜_k𝒫)
        first = d1 + np.einsum("kab,bc->kac", A, P0)
        out = (d2 + np.einsum("ijab,bc->ijac", dA, P0) + np.einsum("jab,ibc->ijac", A, d1)
               + np.einsum("iab,jbc->ijac", A, d1) + np.einsum("iab,jbc,cd->ijad", A, A, P0)
               - np.einsum("kij,kab->ijab", Gam, first))
        return first, out

    jp = fd_jet(lambda x: parallel_transport(patch_g, conn_A, x, xp), xp, h)
    rep.add("[P] = I", jp.value, I, tol)
    first, second = cov2(jp.value, jp.d1, jp.d2)
    rep.add("[nabla P] = 0", first, np.zeros_like(first), tol, jp.err1)
    rep.add("[nabla nabla P] = R/2", second, 0.5 * conn_A.curvature(xp), tol, jp.err2, jp.order2)
    rep.add("[P_,i] = -A_i", jp.d1, -A, tol, jp.err1)
    rep.add("[P_,ij] = -A_(i,j) + A_(i A_j)", jp.d2,
            -0.5 * (dA + np.swapaxes(dA, 0, 1)) + 0.5 * (np.einsum("iab,jbc->ijac", A, A) + np.einsum("jab,ibc->ijac", A, A)),
            tol, jp.err2)
    if conn_B is not None:
        ph = patch_g if patch_h is None else patch_h
        B = conn_B.at(xp)
        C = B - A
        dC = conn_B.d_at(xp) - dA
        jq = fd_jet(lambda x: parallel_transport(ph, conn_B, x, xp), xp, h)
        first, second = cov2(jq.value, jq.d1, jq.d2)
        rep.add("[nabla^{g,A} P_{h,B}] = -C", first, -C, tol, jq.err1)
        # ∇_iC_j = ∂_iC_j − Γ^k_ij C_k + [𝒜_i, C_j]
        nC = (dC - np.einsum("kij,kab->ijab", Gam, C) + np.einsum("iab,jbc->ijac", A, C)
              - np.einsum("jab,ibc->ijac", C, A))
        CC = np.einsum("iab,jbc->ijac", C, C)
        exp2 = -0.5 * (nC + np.swapaxes(nC, 0, 1)) + 0.5 * (CC + np.swapaxes(CC, 0, 1))
        rep.add("[nabla_(i nabla_j) P_{h,B}]", 0.5 * (second + np.swapaxes(second, 0, 1)), exp2, tol, jq.err2,
                jq.order2)
    return rep


@dataclass
class Recovery:
    x: list
    g_inv_recovered: list
    g_inv_exact: list
    error: float
    series_error: list
    fd_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def metric_recovery(patch: MetricPatch, x, xp=None, h: float = 0.02, series_terms: int = 6) -> Recovery:
    """g^{ij}(x) = γ^{ik′}γ^{jl′}Y_{k′l′} with Y = σ_{,k′l′} − σ_{,j′}γ^{ij′}σ_{,k′l′i}.

    ``series_error`` holds the error of g_{ij} from the truncated series
    X = Σ(βV)ⁿβ for 1..series_terms terms.
    """
    xp = patch.center if xp is None else np.atleast_1d(np.asarray(xp, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sp = sigma_point(patch, x, xp)
    mixed = sp.d2_x_xp  # [i, k′]
    gam = np.linalg.inv(mixed)  # [k′, i]
    spp = sigma_point(patch, xp, x).d2_xx  # σ_{,k′l′}
    j3 = fd_jet(lambda y: sigma_point(patch, xp, y).d2_xx, x, h, second=False)
    D3 = j3.d1.transpose(1, 2, 0)  # [k′, l′, i]
    V = np.einsum("j,ji,kli->kl", sp.d_xp, gam, D3)
    Y = spp - V
    g_inv = gam.T @ Y @ gam
    exact = np.linalg.inv(patch.g(x))
    beta = np.linalg.inv(spp)
    g_low = patch.g(x)
    errs = []
    X = np.zeros_like(beta)
    term = beta
    for _ in range(series_terms):
        X = X + term
        errs.append(float(np.abs(mixed @ X @ mixed.T - g_low).max()))
        term = term @ V @ beta
    return Recovery(x.tolist(), g_inv.tolist(), exact.tolist(), float(np.abs(g_inv - exact).max()), errs, j3.err1)
