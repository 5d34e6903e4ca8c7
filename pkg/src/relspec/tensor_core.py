"""Geometry of operator pairs on flat periodic model manifolds.

Fields are sampled on a uniform periodic grid and stored point-major: a
tensor field with ``r`` indices on a manifold of dimension ``n`` is an array
of shape ``(npts, n, ..., n)``.  Fiber endomorphisms add two trailing axes
``(f, f)``.  Derivatives are Fourier spectral.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "ModelManifold",
    "DiracData",
    "OperatorGeometry",
    "CombinedGeometry",
    "symmetrize",
    "christoffel",
    "covariant_derivative",
    "riemann_curvature",
    "connection_curvature",
    "combine",
    "combined_metric",
    "dual_metric",
    "combined_connection",
    "noncompat_tensors",
    "sigma_tensors",
    "aux_tensors",
    "effective_potential",
    "s_tensor_w_form",
    "s_tensor_k_form",
    "PAULI",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class GeometryError(ValueError):
    """Invalid or internally inconsistent geometric data."""


# ---------------------------------------------------------------------------
# manifold and spectral calculus


@dataclass(frozen=True)
class ModelManifold:
    """Flat circle (n=1) or flat 2-torus with a uniform periodic grid.

    Parameters
    ----------
    periods : tuple of float
        Period of each coordinate; ``len(periods)`` is the dimension.
    grid : int
        Even number of samples per dimension, at least 8.
    """

    periods: tuple
    grid: int

    def __post_init__(self):
        periods = tuple(float(p) for p in self.periods)
        object.__setattr__(self, "periods", periods)
        if len(periods) not in (1, 2):
            raise GeometryError("dimension must be 1 or 2")
        if any(p <= 0 for p in periods):
            raise GeometryError(f"periods must be positive, got {periods}")
        if self.grid < 8 or self.grid % 2:
            raise GeometryError(f"grid must be even and >= 8, got {self.grid}")

    @classmethod
    def circle(cls, circumference: float = 2 * math.pi, grid: int = 256) -> "ModelManifold":
        return cls((circumference,), grid)

    @classmethod
    def torus(cls, periods: Sequence[float], grid: int = 64) -> "ModelManifold":
        return cls(tuple(periods), grid)

    @property
    def n(self) -> int:
        return len(self.periods)

    @property
    def shape(self) -> tuple:
        return (self.grid,) * self.n

    @property
    def npts(self) -> int:
        return self.grid**self.n

    @property
    def cell_volume(self) -> float:
        return float(np.prod([p / self.grid for p in self.periods]))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @cached_property
    def coords(self) -> np.ndarray:
        """Grid coordinates, shape ``(npts, n)``."""
        axes = [np.arange(self.grid) * p / self.grid for p in self.periods]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def wavenumbers(self, axis: int, nyquist: str = "zero") -> np.ndarray:
        """Angular wavenumbers along ``axis``.

        ``nyquist='zero'`` drops the Nyquist mode (real derivative of real
        fields); ``'positive'`` keeps it as +N/2, which gives an invertible
        anti-Hermitian derivative suitable for operator assembly.
        """
        N = self.grid
        k = np.fft.fftfreq(N, d=1.0 / N)
        if nyquist == "zero":
            k[N // 2] = 0.0
        elif nyquist == "positive":
            k[N // 2] = N // 2
        else:
            raise ValueError(nyquist)
        return k * (2 * math.pi / self.periods[axis])

    def deriv(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral partial derivative of a point-major field."""
        f = np.asarray(f)
        tail = f.shape[1:]
        g = f.reshape(self.shape + tail)
        k = self.wavenumbers(axis)
        bshape = [1] * g.ndim
        bshape[axis] = self.grid
        d = np.fft.ifft(1j * k.reshape(bshape) * np.fft.fft(g, axis=axis), axis=axis)
        if not np.iscomplexobj(f):
            d = d.real
        return d.reshape(f.shape)

    def grad(self, f: np.ndarray) -> np.ndarray:
        """All partial derivatives; the new index is inserted right after the point axis."""
        return np.stack([self.deriv(f, a) for a in range(self.n)], axis=1)

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Trapezoidal rule, spectrally exact for smooth periodic integrands."""
        return np.sum(f, axis=0) * self.cell_volume

    def derivative_matrix(self, axis: int) -> np.ndarray:
        """Dense spectral derivative along ``axis`` acting on point-major vectors."""
        N = self.grid
        k = self.wavenumbers(axis, nyquist="positive")
        F = np.fft.fft(np.eye(N), axis=0)
        D1 = np.fft.ifft(1j * k[:, None] * F, axis=0)
        mats = [np.eye(N)] * self.n
        mats[axis] = D1
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    def spectral_tail(self, f: np.ndarray) -> float:
        """Fraction of energy in the outermost resolved Fourier shell."""
        g = np.asarray(f).reshape(self.shape + (-1,))
        c = np.fft.fftn(g, axes=tuple(range(self.n)))
        e = np.abs(c) ** 2
        k = np.abs(np.fft.fftfreq(self.grid, d=1.0 / self.grid))
        kmax = np.zeros(self.shape)
        for a in range(self.n):
            bshape = [1] * self.n
            bshape[a] = self.grid
            kmax = np.maximum(kmax, k.reshape(bshape))
        shell = kmax >= self.grid // 2 - 1
        total = e.sum()
        return float(e[shell].sum() / total) if total > 0 else 0.0


# ---------------------------------------------------------------------------
# small tensor helpers


def symmetrize(T: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Average of ``T`` over all permutations of the given axes."""
    axes = list(axes)
    if len(axes) < 2:
        return T.copy()
    acc = np.zeros_like(T)
    count = 0
    for perm in itertools.permutations(axes):
        order = list(range(T.ndim))
        for a, b in zip(axes, perm):
            order[a] = b
        acc = acc + np.transpose(T, order)
        count += 1
    return acc / count


def _inv(m: np.ndarray) -> np.ndarray:
    return np.linalg.inv(m)


def _check_spd(m: np.ndarray, what: str) -> None:
    sym = np.max(np.abs(m - np.swapaxes(m, -1, -2)))
    if sym > 1e-12 * max(1.0, np.max(np.abs(m))):
        raise GeometryError(f"{what} is not symmetric (defect {sym:.3e})")
    ev = np.linalg.eigvalsh(m)
    bad = np.where(ev.min(axis=-1) <= 0)[0]
    if bad.size:
        raise GeometryError(f"{what} is not positive definite at grid point {int(bad[0])}")


def christoffel(man: ModelManifold, g_low: np.ndarray, g_up: np.ndarray) -> np.ndarray:
    """Christoffel symbols ``Gamma[p, m, i, j]`` = Γ^m_{ij}."""
    dg = man.grad(g_low)  # (P, k, i, j)
    low = 0.5 * (np.einsum("pijl->plij", dg) + np.einsum("pjil->plij", dg) - dg)
    # low[p, l, i, j] = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
    return np.einsum("pml,plij->pmij", g_up, low)


def covariant_derivative(man: ModelManifold, T: np.ndarray, Gamma: np.ndarray, kinds: str) -> np.ndarray:
    """∇_k T with the derivative index placed first after the point axis.

    ``kinds`` gives the variance of each tensor index of ``T`` ('u' or 'd');
    any further trailing axes (fiber matrices) are carried along untouched.
    """
    out = man.grad(T)
    for a, kind in enumerate(kinds):
        axis = 2 + a
        Tm = np.moveaxis(T, 1 + a, -1)  # index a moved to the end
        if kind == "d":
            corr = np.einsum("pmki,p...m->pk...i", Gamma, Tm)
            out = out - np.moveaxis(corr, -1, axis)
        elif kind == "u":
            corr = np.einsum("pikm,p...m->pk...i", Gamma, Tm)
            out = out + np.moveaxis(corr, -1, axis)
        else:
            raise ValueError(kinds)
    return out


def riemann_curvature(man: ModelManifold, g_low: np.ndarray, g_up: np.ndarray):
    """Ricci tensor and scalar curvature of a metric field."""
    n = man.n
    P = man.npts
    if n == 1:
        return np.zeros((P, 1, 1)), np.zeros(P)
    G = christoffel(man, g_low, g_up)
    dG = man.grad(G)  # (P, k, i, l, j) = ∂_k Γ^i_{lj}
    Riem = (
        np.einsum("pkilj->pijkl", dG)
        - np.einsum("plikj->pijkl", dG)
        + np.einsum("pikm,pmlj->pijkl", G, G)
        - np.einsum("pilm,pmkj->pijkl", G, G)
    )
    ric = np.einsum("pijil->pjl", Riem)
    ric = 0.5 * (ric + np.swapaxes(ric, 1, 2))
    R = np.einsum("pjl,pjl->p", g_up, ric)
    return ric, R


def connection_curvature(man: ModelManifold, A: np.ndarray) -> np.ndarray:
    """ℛ_{ij} = ∂_i A_j − ∂_j A_i + [A_i, A_j]."""
    dA = man.grad(A)  # (P, i, j, f, f)
    comm = np.einsum("piab,pjbc->pijac", A, A) - np.einsum("pjab,pibc->pijac", A, A)
    return dA - np.swapaxes(dA, 1, 2) + comm


# ---------------------------------------------------------------------------
# operator data


@dataclass(frozen=True)
class DiracData:
    """Frame-form Dirac data: γ^i(x) = e^i_a(x) γ^a plus the potential S(x)."""

    gammas: np.ndarray  # (n, f, f) constant frame matrices
    frame: np.ndarray  # (P, n, n) frame field e^i_a
    S: np.ndarray  # (P, f, f)

    @property
    def gamma_field(self) -> np.ndarray:
        return np.einsum("pia,afg->pifg", self.frame, self.gammas)


@dataclass(frozen=True)
class OperatorGeometry:
    """Coefficient fields of one Laplace- or Dirac-type operator.

    Laplace: L = −g^{-1/4}(∂+𝒜)g^{1/2}g^{ij}(∂+𝒜)g^{-1/4} + Q.
    Dirac:   D = g^{1/4} iγ^j(∂_j+𝒜_j) g^{-1/4} + S, with L = D² and Q
    assembled from the Dirac data.
    """

    manifold: ModelManifold
    g_inv: np.ndarray
    connection: np.ndarray
    potential: np.ndarray
    dirac: Optional[DiracData] = None
    hermiticity_correction: float = 0.0
    constant: bool = False
    label: str = ""

    @classmethod
    def laplace(cls, manifold, g_inv, connection=None, potential=None, fiber_dim=1, label=""):
        P, n = manifold.npts, manifold.n
        g_inv = _as_metric_field(manifold, g_inv)
        f = fiber_dim
        if potential is not None:
            potential = _as_endo_field(manifold, potential)
            f = potential.shape[-1]
        if connection is not None:
            connection = _as_connection_field(manifold, connection)
            f = connection.shape[-1]
        if connection is None:
            connection = np.zeros((P, n, f, f), dtype=complex)
        if potential is None:
            potential = np.zeros((P, f, f), dtype=complex)
        Qh = 0.5 * (potential + np.conj(np.swapaxes(potential, 1, 2)))
        Ah = 0.5 * (connection - np.conj(np.swapaxes(connection, 2, 3)))
        corr = float(max(np.max(np.abs(Qh - potential)), np.max(np.abs(Ah - connection))))
        _check_spd(g_inv, "inverse metric")
        const = all(_is_constant(x) for x in (g_inv, Ah, Qh))
        return cls(manifold, g_inv, Ah, Qh, None, corr, const, label)

    @classmethod
    def from_dirac(cls, manifold, gammas, frame, S, connection=None, label="", tol=1e-10):
        P, n = manifold.npts, manifold.n
        gammas = np.asarray(gammas, dtype=complex)
        f = gammas.shape[-1]
        if gammas.shape[0] != n:
            raise GeometryError("need one frame Dirac matrix per dimension")
        frame = _as_metric_field(manifold, frame, spd=False)
        S = _as_endo_field(manifold, S)
        S = 0.5 * (S + np.conj(np.swapaxes(S, 1, 2)))
        if connection is None:
            connection = np.zeros((P, n, f, f), dtype=complex)
        else:
            connection = _as_connection_field(manifold, connection)
            connection = 0.5 * (connection - np.conj(np.swapaxes(connection, 2, 3)))
        # Clifford relations of the constant frame
        for a in range(n):
            for b in range(n):
                ac = gammas[a] @ gammas[b] + gammas[b] @ gammas[a]
                if np.max(np.abs(ac - 2.0 * (a == b) * np.eye(f))) > tol:
                    raise GeometryError("frame Dirac matrices violate the Clifford relations")
        d = DiracData(gammas, frame, S)
        gam = d.gamma_field
        anti = np.einsum("pab,pibc->piac", S, gam) + np.einsum("piab,pbc->piac", gam, S)
        if np.max(np.abs(anti)) > tol * max(1.0, np.max(np.abs(S))):
            bad = int(np.argmax(np.abs(anti).reshape(P, -1).max(axis=1)))
            raise GeometryError(f"S does not anticommute with the Dirac matrices at grid point {bad}")
        g_inv = np.einsum("pia,pja->pij", frame, frame)
        _check_spd(g_inv, "inverse metric")
        Q = dirac_potential(manifold, g_inv, gam, connection, S)
        const = all(_is_constant(x) for x in (frame, S, connection))
        return cls(manifold, g_inv, connection, Q, d, 0.0, const, label)

    @property
    def n(self) -> int:
        return self.manifold.n

    @property
    def fiber_dim(self) -> int:
        return self.potential.shape[-1]

    @cached_property
    def g_low(self) -> np.ndarray:
        return _inv(self.g_inv)

    @cached_property
    def det_low(self) -> np.ndarray:
        """g = det g_{ij}."""
        return 1.0 / np.linalg.det(self.g_inv)

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det_low)

    @cached_property
    def curvature(self):
        """(Ricci field, scalar curvature field) of the operator's metric."""
        return riemann_curvature(self.manifold, self.g_low, self.g_inv)

    @cached_property
    def connection_curvature(self) -> np.ndarray:
        return connection_curvature(self.manifold, self.connection)

    def shifted(self, potential_shift) -> "OperatorGeometry":
        """Same operator plus a constant endomorphism in Q (Laplace only)."""
        if self.dirac is not None:
            raise GeometryError("shift a Dirac geometry through its S field")
        shift = _as_endo_field(self.manifold, potential_shift)
        return OperatorGeometry.laplace(self.manifold, self.g_inv, self.connection, self.potential + shift)


def dirac_potential(man, g_inv, gam, A, S) -> np.ndarray:
    """Q = −½γ^{ij}ℛ_{ij} + S² + iγ^j∇_j S."""
    R = connection_curvature(man, A)
    gij = 0.5 * (np.einsum("piab,pjbc->pijac", gam, gam) - np.einsum("pjab,pibc->pijac", gam, gam))
    dS = man.grad(S) + np.einsum("pjab,pbc->pjac", A, S) - np.einsum("pab,pjbc->pjac", S, A)
    Q = -0.5 * np.einsum("pijab,pijbc->pac", gij, R) + S @ S + 1j * np.einsum("pjab,pjbc->pac", gam, dS)
    return 0.5 * (Q + np.conj(np.swapaxes(Q, 1, 2)))


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.max(np.abs(x - x[:1])) <= 1e-14 * max(1.0, np.max(np.abs(x))))


def _broadcast(man, value, tail) -> np.ndarray:
    arr = np.asarray(value)
    if arr.shape == tail:
        return np.broadcast_to(arr, (man.npts,) + tail).copy()
    if arr.shape == (man.npts,) + tail:
        return arr.copy()
    raise GeometryError(f"field has shape {arr.shape}, expected {tail} or {(man.npts,) + tail}")


def _as_metric_field(man, value, spd=True) -> np.ndarray:
    n = man.n
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 or (arr.ndim == 1 and arr.shape[0] == man.npts and n == 1):
        arr = arr.reshape(arr.shape + (1, 1)) if arr.ndim == 1 else arr * np.eye(1)
    return _broadcast(man, arr, (n, n)).astype(float)


def _as_endo_field(man, value) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1 and arr.shape[0] == man.npts:
        arr = arr.reshape(-1, 1, 1)
    f = arr.shape[-1]
    return _broadcast(man, arr, (f, f))


def _as_connection_field(man, value) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    n = man.n
    if arr.ndim == 2:  # constant, single direction (n, f*f?) not allowed; (f, f) with n == 1
        arr = arr.reshape(1, *arr.shape)
    f = arr.shape[-1]
    return _broadcast(man, arr, (n, f, f))


# ---------------------------------------------------------------------------
# combined geometry


@dataclass(frozen=True)
class CombinedGeometry:
    """All (t,s)-dependent tensors of an operator pair.

    Index conventions (after the point axis): ``K[i, j, k]`` = K_{ijk} with the
    derivative index first; ``W_plus[i, j, k]`` = W₊^i_{jk}; ``N[j, k, l]``;
    ``M[k, l]``; ``V6[p, q, i, j, k, l]``.
    """

    plus: OperatorGeometry
    minus: OperatorGeometry
    t: float
    s: float
    g_inv: np.ndarray
    g: np.ndarray
    g_det_sqrt: np.ndarray
    G: np.ndarray
    G_inv: np.ndarray
    A_comb: np.ndarray
    C_plus: np.ndarray
    C_minus: np.ndarray
    Gamma: np.ndarray
    K_plus: np.ndarray
    K_minus: np.ndarray
    W_plus: np.ndarray
    W_minus: np.ndarray
    Wv_plus: np.ndarray
    Wv_minus: np.ndarray
    Ws_plus: np.ndarray
    Ws_minus: np.ndarray
    W_vec: np.ndarray
    W_hess: np.ndarray
    dW_plus: np.ndarray
    dW_minus: np.ndarray
    Sigma3: np.ndarray
    Sigma4: np.ndarray
    N: np.ndarray
    M: np.ndarray
    V6: Optional[np.ndarray]
    Q_comb: np.ndarray
    checks: dict = field(default_factory=dict)

    @property
    def manifold(self) -> ModelManifold:
        return self.plus.manifold

    @property
    def n(self) -> int:
        return self.plus.n

    @cached_property
    def ricci_g(self):
        return riemann_curvature(self.manifold, self.g, self.g_inv)


def _check_pair(plus: OperatorGeometry, minus: OperatorGeometry, t: float, s: float) -> None:
    if not (t > 0 and s > 0):
        raise GeometryError(f"t and s must be positive, got t={t}, s={s}")
    if plus.manifold != minus.manifold:
        raise GeometryError("operators live on different manifolds or grids")
    if plus.fiber_dim != minus.fiber_dim:
        raise GeometryError("fiber dimensions differ")


def combined_metric(plus, minus, t, s):
    """g^{ij}(t,s) = t g₊^{ij} + s g₋^{ij}, its inverse and g^{1/2}."""
    _check_pair(plus, minus, t, s)
    g_inv = t * plus.g_inv + s * minus.g_inv
    g = _inv(g_inv)
    return g_inv, g, np.sqrt(np.linalg.det(g))


def dual_metric(plus, minus, t, s, tol=1e-9):
    """G_{ij} = s g⁺_{ij} + t g⁻_{ij} and its inverse, checked against both factorizations."""
    g_inv, _, _ = combined_metric(plus, minus, t, s)
    G = s * plus.g_low + t * minus.g_low
    f1 = np.einsum("pik,pkl,plj->pij", plus.g_low, g_inv, minus.g_low)
    f2 = np.einsum("pik,pkl,plj->pij", minus.g_low, g_inv, plus.g_low)
    scale = max(1.0, float(np.max(np.abs(G))))
    err = float(max(np.max(np.abs(f1 - G)), np.max(np.abs(f2 - G)))) / scale
    if err > tol:
        raise GeometryError(f"dual metric factorizations disagree (defect {err:.3e})")
    return G, _inv(G)


def combined_connection(plus, minus, t, s, tol=1e-9):
    """𝒜(t,s) and 𝒞± = 𝒜± − 𝒜."""
    g_inv, g, _ = combined_metric(plus, minus, t, s)
    mixed = t * np.einsum("pjk,pkab->pjab", plus.g_inv, plus.connection) + s * np.einsum(
        "pjk,pkab->pjab", minus.g_inv, minus.connection
    )
    A = np.einsum("pij,pjab->piab", g, mixed)
    Cp = plus.connection - A
    Cm = minus.connection - A
    ident = t * np.einsum("pij,pjab->piab", plus.g_inv, Cp) + s * np.einsum("pij,pjab->piab", minus.g_inv, Cm)
    scale = max(1.0, float(np.max(np.abs(plus.connection))), float(np.max(np.abs(minus.connection))))
    if np.max(np.abs(ident)) > tol * scale:
        raise GeometryError("connection identity t g+ C+ + s g- C- = 0 violated")
    return A, Cp, Cm


def _noncompat_one(man, h_low, h_inv, h_det, g_det, Gamma):
    K = covariant_derivative(man, h_low, Gamma, "dd")  # (P, i, j, k)
    W = 0.5 * np.einsum("pim,pjkm->pijk", h_inv, K + np.swapaxes(K, 1, 2) - np.einsum("pmjk->pjkm", K))
    Wscalar = 0.5 * np.log(h_det / g_det)
    Wv = np.einsum("piij->pj", W)
    return K, W, Wscalar, Wv


def noncompat_tensors(plus, minus, t, s, tol=1e-7):
    """K±, W±^i_{jk}, W±_j, W±, W_i and W_{ij}.

    Returns a dict; the trace and gradient forms of W±_j are compared and a
    mismatch above ``tol`` (relative to the field scale) raises.
    """
    man = plus.manifold
    g_inv, g, gsq = combined_metric(plus, minus, t, s)
    Gamma = christoffel(man, g, g_inv)
    gdet = gsq**2
    out = {"Gamma": Gamma}
    for tag, op in (("plus", plus), ("minus", minus)):
        K, W, Ws, Wv = _noncompat_one(man, op.g_low, op.g_inv, op.det_low, gdet, Gamma)
        grad = man.grad(Ws)
        scale = max(1.0, float(np.max(np.abs(grad))))
        err = float(np.max(np.abs(grad - Wv))) / scale
        if err > tol:
            raise GeometryError(
                f"W_{tag} trace and gradient forms disagree by {err:.2e}; refine the grid"
            )
        out[f"K_{tag}"] = K
        out[f"W_{tag}"] = W
        out[f"Ws_{tag}"] = Ws
        out[f"Wv_{tag}"] = Wv
        out[f"dW_{tag}"] = covariant_derivative(man, W, Gamma, "udd")  # (P, j, m, k, l)
    W_vec = 0.5 * (out["Wv_plus"] + out["Wv_minus"])
    dWv = covariant_derivative(man, W_vec, Gamma, "d")  # (P, j, i) = ∇_j W_i
    out["W_vec"] = W_vec
    out["W_hess"] = 0.5 * (dWv + np.swapaxes(dWv, 1, 2))
    return out


def s_tensor_w_form(h_low: np.ndarray, W: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """S_{ijkl} = 4h_{m(i}∇_j W^m_{kl)} + 4h_{m(i}W^n_{jk}W^m_{l)n} + 3h_{nm}W^n_{(ij}W^m_{kl)}."""
    t1 = 4 * np.einsum("pmi,pjmkl->pijkl", h_low, dW)
    t2 = 4 * np.einsum("pmi,pnjk,pmln->pijkl", h_low, W, W)
    t3 = 3 * np.einsum("pnm,pnij,pmkl->pijkl", h_low, W, W)
    return symmetrize(t1 + t2 + t3, (1, 2, 3, 4))


def s_tensor_k_form(h_inv: np.ndarray, K: np.ndarray, dK: np.ndarray) -> np.ndarray:
    """The same tensor written through K_{ijk} = ∇_i h_{jk}; ``dK[a, i, j, k]`` = ∇_a K_{ijk}."""
    t1 = 2 * dK
    t2 = -np.einsum("pmn,pijm,pkln->pijkl", h_inv, K, K)
    t3 = np.einsum("pmn,pnij,pklm->pijkl", h_inv, K, K)
    t4 = -0.25 * np.einsum("pmn,pmij,pnkl->pijkl", h_inv, K, K)
    return symmetrize(t1 + t2 + t3 + t4, (1, 2, 3, 4))


def sigma_tensors(plus, minus, t, s, nc=None):
    """Σ_{ijk} and Σ_{ijkl}, totally symmetric."""
    if nc is None:
        nc = noncompat_tensors(plus, minus, t, s)
    S3 = 1.5 * symmetrize(s * nc["K_plus"] + t * nc["K_minus"], (1, 2, 3))
    Sp = s_tensor_w_form(plus.g_low, nc["W_plus"], nc["dW_plus"])
    Sm = s_tensor_w_form(minus.g_low, nc["W_minus"], nc["dW_minus"])
    S4 = s * Sp + t * Sm
    return S3, S4


def _n_tensor(Gi, Wv, S3):
    """N^{jkl}, symmetrized over (j,k,l) since it only ever meets symmetric partners."""
    a = 2 * np.einsum("pij,pkl,pi->pjkl", Gi, Gi, Wv)
    b = -(1.0 / 3.0) * (
        2 * np.einsum("pij,pqk,prl,pirq->pjkl", Gi, Gi, Gi, S3)
        + 3 * np.einsum("piq,pjk,prl,pirq->pjkl", Gi, Gi, Gi, S3)
    )
    return symmetrize(a + b, (1, 2, 3))


def _m_tensor(Gi, Wv, Wh, S3, S4):
    """M^{kl}; the Σ₄ block uses the contraction −¼(G^{ij}G^{kl} + 4G^{ik}G^{jl})G^{pq}Σ_{ijpq}."""
    WW = Wh + np.einsum("pi,pj->pij", Wv, Wv)
    m1 = np.einsum("pkl,pij,pij->pkl", Gi, Gi, WW) + 2 * np.einsum("pik,pjl,pij->pkl", Gi, Gi, WW)
    m2 = -(
        2 * np.einsum("pij,pmk,prl,prim,pj->pkl", Gi, Gi, Gi, S3, Wv)
        + 2 * np.einsum("pim,pjk,prl,prim,pj->pkl", Gi, Gi, Gi, S3, Wv)
        + np.einsum("pkl,pim,prj,prim,pj->pkl", Gi, Gi, Gi, S3, Wv)
    )
    m3 = -0.25 * (
        np.einsum("pij,pkl,pab,pijab->pkl", Gi, Gi, Gi, S4) + 4 * np.einsum("pik,pjl,pab,pijab->pkl", Gi, Gi, Gi, S4)
    )
    # 1/12 from direct Wick counting (105 pairings of Σ₃Σ₃φ₂); 1/72 undercounts by 6
    m4 = (1.0 / 12.0) * (
        2 * np.einsum("pij,par,pbs,pkl,piab,pjrs->pkl", Gi, Gi, Gi, Gi, S3, S3)
        + 3 * np.einsum("pij,pab,prs,pkl,piab,pjrs->pkl", Gi, Gi, Gi, Gi, S3, S3)
        + 6 * np.einsum("pik,pjl,pab,prs,piab,pjrs->pkl", Gi, Gi, Gi, Gi, S3, S3)
        + 12 * np.einsum("pij,pab,pkr,pls,piab,pjrs->pkl", Gi, Gi, Gi, Gi, S3, S3)
        + 12 * np.einsum("pij,par,pkb,psl,piab,pjrs->pkl", Gi, Gi, Gi, Gi, S3, S3)
    )
    M = m1 + m2 + m3 + m4
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def _v6_half(h_low, W, dW, other_low):
    """One ± half of V: (4h_{mp}∇_kW^m_{ij} + 4h_{mp}W^n_{jk}W^m_{in}) h'_{lq}.

    The second covariant derivative of the transported Dirac-matrix trace on
    the diagonal is (−∇_{(k}W^p_{l)m} + W^p_{n(k}W^n_{l)m}); with that value the
    12·h_{mi}W^m_{nk}W^n_{jp} and −6·h_{mi}W^n_{kj}W^m_{np} blocks cancel.
    Returned with axes (p, q, i, j, k, l), not yet symmetrized.
    """
    a = 4 * np.einsum("pma,pkmij->paijk", h_low, dW) + 4 * np.einsum("pma,pnjk,pmin->paijk", h_low, W, W)
    return np.einsum("paijk,plb->pabijkl", a, other_low)


def aux_tensors(plus, minus, t, s, nc=None, S3=None, S4=None, G_inv=None, with_v6=True):
    """N^{jkl}, M^{kl} and V_{pqijkl}."""
    if nc is None:
        nc = noncompat_tensors(plus, minus, t, s)
    if S3 is None or S4 is None:
        S3, S4 = sigma_tensors(plus, minus, t, s, nc)
    if G_inv is None:
        _, G_inv = dual_metric(plus, minus, t, s)
    N = _n_tensor(G_inv, nc["W_vec"], S3)
    M = _m_tensor(G_inv, nc["W_vec"], nc["W_hess"], S3, S4)
    V6 = None
    if with_v6:
        vp = _v6_half(plus.g_low, nc["W_plus"], nc["dW_plus"], minus.g_low)
        vm = _v6_half(minus.g_low, nc["W_minus"], nc["dW_minus"], plus.g_low)
        vm = np.swapaxes(vm, 1, 2)  # second half carries (q, p) from the helper; reorder to (p, q)
        cross = 6 * np.einsum("pma,pmij,pnb,pnkl->pabijkl", plus.g_low, nc["W_plus"], minus.g_low, nc["W_minus"])
        V6 = symmetrize(vp + vm + cross, (3, 4, 5, 6))
    return N, M, V6


def effective_potential(plus, minus, t, s, nc=None, C=None):
    """Q(t,s) of the summed operator tL₊ + sL₋."""
    man = plus.manifold
    if nc is None:
        nc = noncompat_tensors(plus, minus, t, s)
    if C is None:
        _, Cp, Cm = combined_connection(plus, minus, t, s)
    else:
        Cp, Cm = C
    f = plus.fiber_dim
    eye = np.eye(f)
    Gamma = nc["Gamma"]
    Q = t * plus.potential + s * minus.potential
    for w, op, Cx, tag in ((t, plus, Cp, "plus"), (s, minus, Cm, "minus")):
        Q = Q - w * np.einsum("pij,piab,pjbc->pac", op.g_inv, Cx, Cx)
        vec = np.einsum("pij,pi->pj", op.g_inv, nc[f"Wv_{tag}"])
        div = np.einsum("pjj->p", man.grad(vec)) + np.einsum("pjjk,pk->p", Gamma, vec)
        sq = np.einsum("pij,pi,pj->p", op.g_inv, nc[f"Wv_{tag}"], nc[f"Wv_{tag}"])
        Q = Q + w * (0.5 * div + 0.25 * sq)[:, None, None] * eye
    return 0.5 * (Q + np.conj(np.swapaxes(Q, 1, 2)))


def combine(plus: OperatorGeometry, minus: OperatorGeometry, t: float, s: float, with_v6: bool = True) -> CombinedGeometry:
    """Build every (t,s)-dependent tensor of the pair."""
    g_inv, g, gsq = combined_metric(plus, minus, t, s)
    G, G_inv = dual_metric(plus, minus, t, s)
    A, Cp, Cm = combined_connection(plus, minus, t, s)
    nc = noncompat_tensors(plus, minus, t, s)
    S3, S4 = sigma_tensors(plus, minus, t, s, nc)
    N, M, V6 = aux_tensors(plus, minus, t, s, nc, S3, S4, G_inv, with_v6=with_v6)
    Q = effective_potential(plus, minus, t, s, nc, (Cp, Cm))
    detG = np.linalg.det(G)
    expect = plus.det_low * minus.det_low / gsq**2
    checks = {"detG_relative_defect": float(np.max(np.abs(detG - expect) / np.abs(expect)))}
    return CombinedGeometry(
        plus, minus, float(t), float(s), g_inv, g, gsq, G, G_inv, A, Cp, Cm, nc["Gamma"],
        nc["K_plus"], nc["K_minus"], nc["W_plus"], nc["W_minus"], nc["Wv_plus"], nc["Wv_minus"],
        nc["Ws_plus"], nc["Ws_minus"], nc["W_vec"], nc["W_hess"], nc["dW_plus"], nc["dW_minus"],
        S3, S4, N, M, V6, Q, checks,
    )
