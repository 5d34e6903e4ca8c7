"""Spectral path: assemble operators on the grid, diagonalize, sum traces.

The discretization is Fourier pseudospectral.  Sections are half-densities,
so the plain Euclidean inner product of grid vectors is the L² product and
eigenvectors returned by ``numpy.linalg.eigh`` are already orthonormal.

A Laplace operator is assembled in divergence form

    L = Σ_ij B_iᴴ diag(g^{1/2} g^{ij}) B_j + Q,    B_j = (∂_j + 𝒜_j) g^{-1/4},

which is Hermitian by construction.  The derivative keeps the Nyquist mode
(as +N/2) so that the constant-coefficient spectrum is exactly the truncated
lattice spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import special

from .tensor_core import GeometryError, OperatorGeometry

__all__ = [
    "TruncationError",
    "SpectralDecomposition",
    "SpectralPair",
    "TraceGrid",
    "ZetaValues",
    "assemble_laplace",
    "assemble_dirac",
    "dirac_square_defect",
    "eigendecompose",
    "decompose",
    "overlap",
    "classical_traces",
    "combined_traces",
    "relative_traces",
]


class TruncationError(RuntimeError):
    """A trace was requested at times too small for the mode cutoff."""


def _blockdiag(fields: np.ndarray) -> np.ndarray:
    """Point-wise (f, f) blocks placed on the diagonal of a (P f, P f) matrix."""
    P, f, _ = fields.shape
    out = np.zeros((P * f, P * f), dtype=complex)
    idx = np.arange(P) * f
    for a in range(f):
        for b in range(f):
            out[idx + a, idx + b] = fields[:, a, b]
    return out


def _covariant_matrices(geom: OperatorGeometry):
    man = geom.manifold
    f = geom.fiber_dim
    eye_f = np.eye(f)
    mats = []
    for j in range(man.n):
        Dj = np.kron(man.derivative_matrix(j), eye_f)
        mats.append(Dj + _blockdiag(geom.connection[:, j]))
    return mats


def assemble_laplace(geom: OperatorGeometry, tol: float = 1e-12) -> np.ndarray:
    """Dense Hermitian matrix of L = −g^{-1/4}(∂+𝒜)g^{1/2}g^{ij}(∂+𝒜)g^{-1/4} + Q."""
    n = geom.n
    f = geom.fiber_dim
    wm = np.repeat(geom.det_low ** (-0.25), f)
    B = [Dj * wm[None, :] for Dj in _covariant_matrices(geom)]
    L = _blockdiag(geom.potential).astype(complex)
    for i in range(n):
        for j in range(n):
            w = np.repeat(geom.sqrt_det * geom.g_inv[:, i, j], f)
            L += B[i].conj().T @ (w[:, None] * B[j])
    defect = np.max(np.abs(L - L.conj().T)) / max(1.0, np.max(np.abs(L)))
    if defect > tol:
        raise GeometryError(f"assembled Laplace operator is not Hermitian (defect {defect:.3e})")
    return 0.5 * (L + L.conj().T)


def assemble_dirac(geom: OperatorGeometry, tol: float = 1e-9) -> np.ndarray:
    """Dense matrix of D = g^{1/4} iγ^j(∂_j+𝒜_j) g^{-1/4} + S, Hermitian part returned.

    The anti-Hermitian remainder vanishes identically when the compatibility
    condition holds pointwise (always so in one dimension with a U(1)
    connection).  Its relative size is checked against ``tol``.
    """
    if geom.dirac is None:
        raise GeometryError("geometry carries no Dirac data")
    f = geom.fiber_dim
    gam = geom.dirac.gamma_field
    left = geom.det_low**0.25
    right = np.repeat(geom.det_low ** (-0.25), f)
    D = _blockdiag(geom.dirac.S).astype(complex)
    for j, Cj in enumerate(_covariant_matrices(geom)):
        blk = _blockdiag(1j * left[:, None, None] * gam[:, j])
        D += blk @ (Cj * right[None, :])
    anti = np.max(np.abs(D - D.conj().T)) / max(1.0, np.max(np.abs(D)))
    if anti > tol:
        raise GeometryError(
            f"Dirac operator fails Hermiticity by {anti:.3e}; check connection compatibility"
        )
    return 0.5 * (D + D.conj().T)


def dirac_square_defect(geom: OperatorGeometry, band: float = 0.25) -> float:
    """Relative mismatch of D² against the Laplace operator of the induced geometry.

    Measured on band-limited sections (Fourier modes below ``band`` of the
    grid), where both discretizations are spectrally accurate.
    """
    D = assemble_dirac(geom)
    L = assemble_laplace(geom)
    man = geom.manifold
    f = geom.fiber_dim
    rng = np.random.default_rng(0)
    coef = rng.standard_normal(man.shape + (f,)) + 1j * rng.standard_normal(man.shape + (f,))
    k = np.abs(np.fft.fftfreq(man.grid, d=1.0 / man.grid))
    mask = np.ones(man.shape, dtype=bool)
    for a in range(man.n):
        bshape = [1] * man.n
        bshape[a] = man.grid
        mask &= (k <= band * man.grid / 2).reshape(bshape)
    coef = coef * mask[..., None]
    v = np.fft.ifftn(coef, axes=tuple(range(man.n))).reshape(-1)
    Lv = L @ v
    return float(np.linalg.norm(D @ (D @ v) - Lv) / np.linalg.norm(Lv))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of one discretized operator.

    For Dirac operators ``eigenvalues`` holds μ_k; the associated Laplace
    eigenvalues are μ_k².  ``resolved`` is the largest eigenvalue of the
    squared operator that the grid reproduces faithfully; it drives the
    truncation-tail estimates.
    """

    eigenvalues: np.ndarray
    eigensections: np.ndarray
    operator_tag: str
    mode_cutoff: int
    n: int
    weyl_volume: float
    fiber_dim: int
    resolved: float
    residual: float = 0.0
    gram_defect: float = 0.0

    @property
    def is_dirac(self) -> bool:
        return self.operator_tag.startswith("dirac")

    @cached_property
    def lam(self) -> np.ndarray:
        """Eigenvalues of the Laplace-type operator (μ² for Dirac)."""
        return self.eigenvalues**2 if self.is_dirac else self.eigenvalues

    def theta_tail(self, t: float) -> float:
        """Weyl estimate of Σ_{λ > resolved} e^{-tλ}."""
        a = self.n / 2
        return float((4 * math.pi * t) ** (-a) * self.weyl_volume * self.fiber_dim * special.gammaincc(a, t * self.resolved))


def _resolved_fraction(geom: OperatorGeometry) -> float:
    return 1.0 if geom.constant else 0.5


def eigendecompose(matrix: np.ndarray, tag: str, geom: OperatorGeometry, cutoff: Optional[int] = None,
                   check: bool = True) -> SpectralDecomposition:
    """Dense Hermitian eigensolve with residual and orthonormality checks."""
    try:
        w, V = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        cond = np.linalg.cond(matrix)
        raise RuntimeError(f"eigensolver failed (condition number {cond:.3e})") from exc
    man = geom.manifold
    if tag.startswith("dirac"):
        order = np.argsort(np.abs(w), kind="stable")
        w, V = w[order], V[:, order]
    if cutoff is not None:
        w, V = w[:cutoff], V[:, :cutoff]
    residual = gram = 0.0
    if check:
        R = matrix @ V - V * w[None, :]
        # backward error relative to the spectral radius
        residual = float(np.max(np.linalg.norm(R, axis=0)) / max(1.0, float(np.max(np.abs(w)))))
        gram = float(np.max(np.abs(V.conj().T @ V - np.eye(V.shape[1]))))
        if residual > 1e-11 or gram > 1e-10:
            raise RuntimeError(f"eigenpairs inaccurate: residual {residual:.2e}, gram defect {gram:.2e}")
    lam = w**2 if tag.startswith("dirac") else w
    frac = _resolved_fraction(geom)
    lam_sorted = np.sort(lam)
    idx = max(0, min(len(lam_sorted) - 1, int(frac**man.n * len(lam_sorted)) - 1))
    resolved = float(lam_sorted[idx])
    vol = float(man.integrate(geom.sqrt_det))
    return SpectralDecomposition(w, V, tag, V.shape[1], man.n, vol, geom.fiber_dim,
                                 resolved, residual, gram)


def decompose(geom: OperatorGeometry, kind: Optional[str] = None, sign: str = "+", check: bool = True) -> SpectralDecomposition:
    """Assemble and diagonalize; ``kind`` defaults to Dirac when Dirac data is present."""
    if kind is None:
        kind = "dirac" if geom.dirac is not None else "laplace"
    mat = assemble_dirac(geom) if kind == "dirac" else assemble_laplace(geom)
    return eigendecompose(mat, f"{kind}{sign}", geom, check=check)


def overlap(dec_minus: SpectralDecomposition, dec_plus: SpectralDecomposition) -> np.ndarray:
    """O_{jk} = (φ⁻_j, φ⁺_k) in the plain grid inner product."""
    return dec_minus.eigensections.conj().T @ dec_plus.eigensections


@dataclass(frozen=True)
class TraceGrid:
    """Trace values on a lattice of times, with a truncation-tail bound per entry."""

    tag: str
    t: np.ndarray
    s: Optional[np.ndarray]
    values: np.ndarray
    tail: np.ndarray
    eps: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ZetaValues:
    Z_X: complex
    Z_Y: Optional[complex]
    Z_Psi: complex
    Z_Phi: Optional[complex]
    Z_Psi_direct: complex
    excluded_plus: int
    excluded_minus: int
    tail: float
    roundoff: float = 0.0


class SpectralPair:
    """Two decompositions on one manifold with their overlap matrix.

    All combined traces are sums Σ_{jk} f(λ⁺_k) g(λ⁻_j) |O_{jk}|², evaluated
    as vector-matrix-vector products in a fixed order (deterministic output).
    """

    def __init__(self, plus: SpectralDecomposition, minus: SpectralDecomposition, tol: float = 1e-8):
        if plus.eigensections.shape[0] != minus.eigensections.shape[0]:
            raise GeometryError("decompositions live on different grids")
        self.plus = plus
        self.minus = minus
        self.O = overlap(minus, plus)
        self.P2 = np.abs(self.O) ** 2
        self.tol = tol

    @property
    def is_dirac(self) -> bool:
        return self.plus.is_dirac and self.minus.is_dirac

    # -- bookkeeping -------------------------------------------------------

    def completeness(self) -> tuple:
        """Row and column sums of |O|²; both are 1 for complete bases."""
        return self.P2.sum(axis=1), self.P2.sum(axis=0)

    def tail_X(self, t: float, s: float) -> float:
        """Golden-Thompson style bound on the unresolved part of X(t,s)."""
        a = self.plus.n / 2
        if t <= 0 and s <= 0:
            return math.inf
        vols = []
        if t > 0:
            vols.append(t ** (-a) * self.plus.weyl_volume)
        if s > 0:
            vols.append(s ** (-a) * self.minus.weyl_volume)
        lam_c = max(t, 0.0) * self.plus.resolved + max(s, 0.0) * self.minus.resolved
        return float((4 * math.pi) ** (-a) * min(vols) * self.plus.fiber_dim * special.gammaincc(a, lam_c))

    def _guard(self, value: float, tail: float, what: str, strict: bool) -> None:
        if strict and tail > self.tol * abs(value):
            raise TruncationError(
                f"{what}: truncation tail {tail:.2e} exceeds {self.tol:.0e} of the value {value:.6e}; "
                "increase the grid or the times"
            )

    # -- single traces ------------------------------------------------------

    def theta(self, which: str, t: float) -> float:
        dec = self.plus if which == "+" else self.minus
        return float(np.sum(np.exp(-t * dec.lam)))

    def dtheta(self, which: str, t: float) -> float:
        dec = self.plus if which == "+" else self.minus
        return float(-np.sum(dec.lam * np.exp(-t * dec.lam)))

    def H(self, which: str, t: float) -> float:
        dec = self.plus if which == "+" else self.minus
        return float(np.sum(dec.eigenvalues * np.exp(-t * dec.lam)))

    # -- combined traces ----------------------------------------------------

    def X(self, t: float, s: float, strict: bool = False) -> float:
        u = np.exp(-t * self.plus.lam)
        v = np.exp(-s * self.minus.lam)
        val = float(v @ self.P2 @ u)
        self._guard(val, self.tail_X(t, s), f"X({t}, {s})", strict)
        return val

    def Y(self, t: float, s: float, strict: bool = False) -> float:
        if not self.is_dirac:
            raise GeometryError("Y needs Dirac decompositions")
        u = self.plus.eigenvalues * np.exp(-t * self.plus.lam)
        v = self.minus.eigenvalues * np.exp(-s * self.minus.lam)
        val = float(v @ self.P2 @ u)
        self._guard(val, self.tail_X(t, s) * self._mu_scale(t, s), f"Y({t}, {s})", strict)
        return val

    def _mu_scale(self, t, s):
        return math.sqrt(max(self.plus.resolved, 1.0) * max(self.minus.resolved, 1.0))

    def Psi(self, t: float, s: float, strict: bool = False) -> float:
        return (self.theta("+", t + s) + self.theta("-", t + s) - self.X(t, s, strict) - self.X(s, t, strict))

    def Phi(self, t: float, s: float, strict: bool = False) -> float:
        return (-self.dtheta("+", t + s) - self.dtheta("-", t + s) - self.Y(t, s, strict) - self.Y(s, t, strict))

    def Psi_direct(self, t: float, s: float) -> float:
        """Tr (e^{-tL₊} − e^{-tL₋})(e^{-sL₊} − e^{-sL₋}) from the operator matrices."""
        A = self._func_matrix(lambda lam, mu: np.exp(-t * lam), t)
        B = self._func_matrix(lambda lam, mu: np.exp(-s * lam), s)
        return float(np.real(np.trace(A @ B)))

    def _func_matrix(self, fn, _key):
        Vp, Vm = self.plus.eigensections, self.minus.eigensections
        fp = fn(self.plus.lam, self.plus.eigenvalues)
        fm = fn(self.minus.lam, self.minus.eigenvalues)
        return (Vp * fp[None, :]) @ Vp.conj().T - (Vm * fm[None, :]) @ Vm.conj().T

    def X_matrix(self, ts: np.ndarray, ss: np.ndarray) -> np.ndarray:
        """X(t_a, s_b) for all pairs, shape (len(ts), len(ss))."""
        U = np.exp(-np.outer(ts, self.plus.lam))
        Vv = np.exp(-np.outer(ss, self.minus.lam))
        return U @ self.P2.T @ Vv.T

    def Y_matrix(self, ts: np.ndarray, ss: np.ndarray) -> np.ndarray:
        U = np.exp(-np.outer(ts, self.plus.lam)) * self.plus.eigenvalues[None, :]
        Vv = np.exp(-np.outer(ss, self.minus.lam)) * self.minus.eigenvalues[None, :]
        return U @ self.P2.T @ Vv.T

    def _theta_matrix(self, ts, ss, weight_power: int) -> np.ndarray:
        out = 0.0
        for dec in (self.plus, self.minus):
            w = dec.lam ** weight_power
            out = out + (np.exp(-np.outer(ts, dec.lam)) * w[None, :]) @ np.exp(-np.outer(ss, dec.lam)).T
        return out

    def Psi_matrix(self, ts: np.ndarray, ss: np.ndarray) -> np.ndarray:
        """Ψ(t_a, s_b) on a lattice."""
        ts, ss = np.asarray(ts, dtype=float), np.asarray(ss, dtype=float)
        return self._theta_matrix(ts, ss, 0) - self.X_matrix(ts, ss) - self.X_matrix(ss, ts).T

    def Phi_matrix(self, ts: np.ndarray, ss: np.ndarray) -> np.ndarray:
        ts, ss = np.asarray(ts, dtype=float), np.asarray(ss, dtype=float)
        return self._theta_matrix(ts, ss, 1) - self.Y_matrix(ts, ss) - self.Y_matrix(ss, ts).T

    # -- generalized traces -------------------------------------------------

    def W(self, which: str, t: float, alpha: float) -> complex:
        dec = self.plus if which == "+" else self.minus
        return complex(np.sum(np.exp(-t * dec.lam + 1j * alpha * dec.eigenvalues)))

    def V(self, t: float, s: float, alpha: float, beta: float) -> complex:
        u = np.exp(-t * self.plus.lam + 1j * alpha * self.plus.eigenvalues)
        v = np.exp(-s * self.minus.lam + 1j * beta * self.minus.eigenvalues)
        return complex(v @ self.P2 @ u)

    # -- zeta functions -----------------------------------------------------

    def zeta(self, p: float, q: float, zero_tol: float = 1e-9) -> ZetaValues:
        """Relative zeta values; zero modes are excluded and counted."""
        def powers(dec, e):
            lam = dec.lam
            keep = np.abs(lam) > zero_tol * max(1.0, np.max(np.abs(lam)))
            if np.any(lam[keep] < 0):
                raise GeometryError("negative eigenvalue in a Laplace zeta function")
            out = np.zeros_like(lam, dtype=complex)
            out[keep] = lam[keep].astype(complex) ** (-e)
            return out, int(np.sum(~keep))

        lp_p, ex_p = powers(self.plus, p)
        lp_q, _ = powers(self.plus, q)
        lm_p, ex_m = powers(self.minus, p)
        lm_q, _ = powers(self.minus, q)
        ZX = lambda a, b: complex(b @ self.P2 @ a)  # noqa: E731
        Z_X = ZX(lp_p, lm_q)
        Z_Psi = np.sum(lp_p * lp_q) + np.sum(lm_p * lm_q) - ZX(lp_p, lm_q) - ZX(lp_q, lm_p)
        Vp, Vm = self.plus.eigensections, self.minus.eigensections
        Ap = (Vp * lp_p) @ Vp.conj().T - (Vm * lm_p) @ Vm.conj().T
        Aq = (Vp * lp_q) @ Vp.conj().T - (Vm * lm_q) @ Vm.conj().T
        direct = complex(np.trace(Ap @ Aq))
        Z_Y = Z_Phi = None
        if self.is_dirac:
            dp_p, dp_q = self.plus.eigenvalues * lp_p, self.plus.eigenvalues * lp_q
            dm_p, dm_q = self.minus.eigenvalues * lm_p, self.minus.eigenvalues * lm_q
            Z_Y = ZX(dp_p, dm_q)
            Z_Phi = complex(np.sum(dp_p * dp_q) + np.sum(dm_p * dm_q) - ZX(dp_p, dm_q) - ZX(dp_q, dm_p))
        a = self.plus.n / 2
        e = float(np.real(p + q))
        tail = math.inf
        if e > a:
            lam_c = min(self.plus.resolved, self.minus.resolved)
            tail = ((4 * math.pi) ** (-a) * max(self.plus.weyl_volume, self.minus.weyl_volume) * self.plus.fiber_dim
                    / math.gamma(a) * lam_c ** (a - e) / (e - a))
        # eigh perturbs each eigenvalue by about ε_mach·λ_max; propagate to first order
        lam_max = max(np.max(np.abs(self.plus.lam)), np.max(np.abs(self.minus.lam)))
        bound = 0.0
        for dec in (self.plus, self.minus):
            lam = np.abs(dec.lam[np.abs(dec.lam) > zero_tol * max(1.0, lam_max)])
            lo = lam.min()
            bound += np.sum(abs(p) * lam ** (-np.real(p) - 1)) * 2 * lo ** -np.real(q)
            bound += np.sum(abs(q) * lam ** (-np.real(q) - 1)) * 2 * lo ** -np.real(p)
        roundoff = float(np.finfo(float).eps * lam_max * bound)
        return ZetaValues(Z_X, Z_Y, complex(Z_Psi), Z_Phi, direct, ex_p, ex_m, float(tail), roundoff)

    # -- large time ---------------------------------------------------------

    def bottom_overlap(self, rtol: float = 1e-8) -> float:
        """Tr P₁⁺P₁⁻ for the lowest eigenspaces."""
        lp, lm = self.plus.lam, self.minus.lam
        kp = np.abs(lp - lp.min()) <= rtol * max(1.0, abs(lp.min()))
        km = np.abs(lm - lm.min()) <= rtol * max(1.0, abs(lm.min()))
        return float(self.P2[np.ix_(km, kp)].sum())


def classical_traces(dec: SpectralDecomposition, ts, strict: bool = True, tol: float = 1e-8) -> dict:
    """Θ(t) and H(t) on a list of times, each with its tail bound."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts <= 0):
        raise ValueError("times must be positive")
    E = np.exp(-np.outer(ts, dec.lam))
    theta = E.sum(axis=1)
    H = (E * dec.eigenvalues[None, :]).sum(axis=1) if dec.is_dirac else None
    tail = np.array([dec.theta_tail(t) for t in ts])
    if strict:
        bad = np.where(tail > tol * np.abs(theta))[0]
        if bad.size:
            t0 = ts[bad[0]]
            need = math.ceil(math.sqrt(dec.resolved) * 1.5)
            raise TruncationError(
                f"Theta({t0}) has truncation tail {tail[bad[0]]:.2e}; "
                f"raise the cutoff (roughly {need}+ modes per unit wavenumber)"
            )
    out = {"Theta": TraceGrid("Theta", ts, None, theta, tail)}
    if H is not None:
        out["H"] = TraceGrid("H", ts, None, H, tail * math.sqrt(max(dec.resolved, 1.0)))
    return out


def combined_traces(pair: SpectralPair, ts, ss, strict: bool = True) -> dict:
    """X and (for Dirac pairs) Y on a (t, s) lattice."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    ss = np.atleast_1d(np.asarray(ss, dtype=float))
    X = pair.X_matrix(ts, ss)
    tail = np.array([[pair.tail_X(t, s) for s in ss] for t in ts])
    if strict and np.any(tail > pair.tol * np.abs(X)):
        raise TruncationError("X lattice reaches below the resolved time scale")
    out = {"X": TraceGrid("X", ts, ss, X, tail)}
    if pair.is_dirac:
        out["Y"] = TraceGrid("Y", ts, ss, pair.Y_matrix(ts, ss), tail * pair._mu_scale(0, 0))
    return out


def relative_traces(pair: SpectralPair, ts, ss, strict: bool = True) -> dict:
    """Ψ and (for Dirac pairs) Φ on a (t, s) lattice."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    ss = np.atleast_1d(np.asarray(ss, dtype=float))
    tail = np.array([[pair.tail_X(t, s) + pair.tail_X(s, t) for s in ss] for t in ts])
    psi = pair.Psi_matrix(ts, ss)
    if strict:
        # Ψ is a difference of traces, so compare the tail with the traces themselves
        scale = pair.X_matrix(ts, ss) + pair.X_matrix(ss, ts).T
        if np.any(tail > pair.tol * np.abs(scale)):
            raise TruncationError("Psi lattice reaches below the resolved time scale")
    out = {"Psi": TraceGrid("Psi", ts, ss, psi, tail)}
    if pair.is_dirac:
        out["Phi"] = TraceGrid("Phi", ts, ss, pair.Phi_matrix(ts, ss), tail * pair._mu_scale(0, 0))
    return out
