"""Laplace-method asymptotics of F(ε) = (4πε)^{-n/2} ∫ exp(−Σ/2ε) φ.

Gaussian averages use the weight (4π)^{-n/2} G^{1/2} exp(−¼⟨y, Gy⟩), so
⟨yⁱyʲ⟩ = 2Gⁱʲ. Moments are enumerated as Wick pairings and cross-checked
against the symmetrized-product formula. The closed F₀/F₁/F₂ formulas are
cross-checked against a generic route that expands exp(−Σ̂/2ε)φ̂ as a
polynomial and averages it term by term.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "GaussianModel",
    "TaylorData",
    "PreconditionError",
    "QuadratureError",
    "pair_partitions",
    "gaussian_moment",
    "symmetrized_moment",
    "Polynomial",
    "hermite_polynomial",
    "hermite_eval",
    "hermite_orthogonality",
    "gaussian_average",
    "gauss_hermite_average",
    "flat_expansion",
    "morse_expansion",
    "generic_expansion",
    "ruse_synge_coefficients",
    "QuadratureResult",
    "quadrature_oracle",
    "SymmetrizationCheck",
    "symmetrization_identity_check",
    "symmetrize_full",
]


class PreconditionError(ValueError):
    """An expansion was requested outside its stated hypotheses."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GaussianModel:
    """Quadratic form G_ij with its inverse and determinant."""

    G: np.ndarray
    Ginv: np.ndarray
    det: float

    @classmethod
    def from_hessian(cls, G, tol: float = 1e-12) -> "GaussianModel":
        G = np.atleast_2d(np.asarray(G, dtype=float))
        if G.shape[0] != G.shape[1]:
            raise ValueError("Hessian must be square")
        if not np.allclose(G, G.T, atol=tol * max(1.0, np.abs(G).max())):
            raise ValueError("Hessian must be symmetric")
        G = 0.5 * (G + G.T)
        w = np.linalg.eigvalsh(G)
        if w.min() <= 0:
            raise ValueError(f"Hessian is not positive definite (smallest eigenvalue {w.min():.3e})")
        Ginv = np.linalg.inv(G)
        if np.abs(G @ Ginv - np.eye(len(G))).max() > 1e3 * np.finfo(float).eps * np.linalg.cond(G):
            raise ValueError("inverse Hessian failed verification")
        return cls(G, Ginv, float(np.prod(w)))

    @property
    def n(self) -> int:
        return self.G.shape[0]


def symmetrize_full(T: np.ndarray) -> np.ndarray:
    """Average of T over all permutations of its axes."""
    T = np.asarray(T)
    if T.ndim < 2:
        return T.copy()
    perms = list(itertools.permutations(range(T.ndim)))
    return sum(np.transpose(T, p) for p in perms) / len(perms)


@dataclass
class TaylorData:
    """Diagonal jets of Σ and of the scalar g^{-1/2}φ at the critical point.

    ``phi`` lists the symmetrized covariant derivatives of g^{-1/2}φ of
    orders 0..4 (missing orders are zero). ``metric`` and ``ricci`` describe
    the base metric; the defaults are the flat Euclidean ones.
    """

    hessian: np.ndarray
    sigma3: Optional[np.ndarray] = None
    sigma4: Optional[np.ndarray] = None
    phi: Sequence = field(default_factory=lambda: [1.0])
    metric: Optional[np.ndarray] = None
    ricci: Optional[np.ndarray] = None
    check_symmetry: bool = True

    def __post_init__(self):
        self.model = GaussianModel.from_hessian(self.hessian)
        n = self.model.n
        self.hessian = self.model.G
        self.sigma3 = np.zeros((n,) * 3) if self.sigma3 is None else np.asarray(self.sigma3, dtype=float)
        self.sigma4 = np.zeros((n,) * 4) if self.sigma4 is None else np.asarray(self.sigma4, dtype=float)
        jets = [np.asarray(p, dtype=float).reshape((n,) * k) if k else float(p) for k, p in enumerate(self.phi)]
        jets += [np.zeros((n,) * k) for k in range(len(jets), 5)]
        self.phi = jets
        self.metric = np.eye(n) if self.metric is None else np.asarray(self.metric, dtype=float)
        self.ricci = np.zeros((n, n)) if self.ricci is None else np.asarray(self.ricci, dtype=float)
        if self.check_symmetry:
            for name, T in [("sigma3", self.sigma3), ("sigma4", self.sigma4), ("metric", self.metric),
                            ("ricci", self.ricci)] + [(f"phi[{k}]", self.phi[k]) for k in range(2, 5)]:
                if np.abs(T - symmetrize_full(T)).max() > 1e-12 * max(1.0, np.abs(T).max()):
                    raise ValueError(f"{name} is not totally symmetric")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def flat(self) -> bool:
        return bool(np.allclose(self.ricci, 0.0))

    def scaled(self, lam: float) -> "TaylorData":
        """Same data with Σ multiplied by ``lam``."""
        return TaylorData(lam * self.hessian, lam * self.sigma3, lam * self.sigma4, list(self.phi),
                          self.metric, self.ricci, check_symmetry=False)


# -- Gaussian moments ------------------------------------------------------


@lru_cache(maxsize=None)
def pair_partitions(m: int) -> tuple:
    """All perfect matchings of range(m) as tuples of pairs."""
    if m % 2:
        return ()
    if m == 0:
        return ((),)
    out = []
    for j in range(1, m):
        rest = [k for k in range(1, m) if k != j]
        for sub in pair_partitions(m - 2):
            out.append(((0, j),) + tuple((rest[a], rest[b]) for a, b in sub))
    return tuple(out)


def gaussian_moment(model: GaussianModel, indices: Sequence[int]) -> float:
    """⟨y^{i₁}⋯y^{i_m}⟩_G by Wick pairing; each pair contributes 2G^{ij}."""
    idx = tuple(indices)
    m = len(idx)
    if m % 2:
        return 0.0
    if m > 8:
        raise ValueError("moments above eighth order are not supported")
    C = 2.0 * model.Ginv
    total = 0.0
    for matching in pair_partitions(m):
        prod = 1.0
        for a, b in matching:
            prod *= C[idx[a], idx[b]]
        total += prod
    return float(total)


def symmetrized_moment(model: GaussianModel, indices: Sequence[int]) -> float:
    """Same moment from (2k)!/k! · G^{(i₁i₂}⋯G^{i_{2k−1}i_{2k})}."""
    idx = tuple(indices)
    m = len(idx)
    if m % 2:
        return 0.0
    k = m // 2
    Gi = model.Ginv
    acc = 0.0
    perms = itertools.permutations(idx)
    count = 0
    for p in perms:
        prod = 1.0
        for a in range(k):
            prod *= Gi[p[2 * a], p[2 * a + 1]]
        acc += prod
        count += 1
    return float(math.factorial(m) / math.factorial(k) * acc / count)


# -- polynomials -------------------------------------------------------------


class Polynomial:
    """Sparse real polynomial in n variables, {exponent tuple: coefficient}."""

    def __init__(self, n: int, terms: Optional[dict] = None):
        self.n = n
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0.0}

    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: float(c)})

    @classmethod
    def from_tensor(cls, T, scale: float = 1.0, n: Optional[int] = None) -> "Polynomial":
        """Σ T_{i₁…i_k} yⁱ¹⋯yⁱᵏ · scale."""
        T = np.asarray(T, dtype=float)
        n = (T.shape[0] if T.ndim else 1) if n is None else n
        out = {}
        if T.ndim == 0:
            return cls.constant(n, float(T) * scale)
        for idx in itertools.product(range(n), repeat=T.ndim):
            c = T[idx]
            if c == 0.0:
                continue
            e = [0] * n
            for i in idx:
                e[i] += 1
            e = tuple(e)
            out[e] = out.get(e, 0.0) + c * scale
        return cls(n, out)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return Polynomial(self.n, out)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.n, {k: v * other for k, v in self.terms.items()})
        out = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                k = tuple(a + b for a, b in zip(ka, kb))
                out[k] = out.get(k, 0.0) + va * vb
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def deriv(self, i: int) -> "Polynomial":
        out = {}
        for k, v in self.terms.items():
            if k[i]:
                e = list(k)
                e[i] -= 1
                out[tuple(e)] = out.get(tuple(e), 0.0) + v * k[i]
        return Polynomial(self.n, out)

    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def __call__(self, y) -> float:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return float(sum(v * np.prod(y ** np.array(k)) for k, v in self.terms.items()))


def hermite_polynomial(model: GaussianModel, indices: Sequence[int]) -> Polynomial:
    """ℋ_{i₁…i_k} = (−1)ᵏ 𝒟_{i₁}⋯𝒟_{i_k}·1 with 𝒟_i = ∂_i − ½G_{ij}yʲ."""
    n = model.n
    p = Polynomial.constant(n, 1.0)
    lin = [Polynomial.from_tensor(model.G[i], -0.5) for i in range(n)]
    for i in reversed(tuple(indices)):
        p = p.deriv(i) + lin[i] * p
    return p * ((-1.0) ** len(indices))


def hermite_eval(model: GaussianModel, indices: Sequence[int], y) -> float:
    return hermite_polynomial(model, indices)(y)


def gaussian_average(model: GaussianModel, poly: Polynomial) -> float:
    """Exact ⟨poly⟩_G from the moments."""
    total = 0.0
    for e, c in poly.terms.items():
        if sum(e) % 2:
            continue
        idx = [i for i, k in enumerate(e) for _ in range(k)]
        total += c * _moment_cached(model.Ginv.tobytes(), model.n, tuple(idx))
    return float(total)


@lru_cache(maxsize=4096)
def _moment_cached(key: bytes, n: int, idx: tuple) -> float:
    Ginv = np.frombuffer(key).reshape(n, n)
    return gaussian_moment(GaussianModel(np.linalg.inv(Ginv), Ginv, 1.0 / np.linalg.det(Ginv)), idx)


def gauss_hermite_average(model: GaussianModel, f: Callable, order: int = 20) -> float:
    """⟨f⟩_G by tensor Gauss–Hermite quadrature (exact for degree < 2·order)."""
    z, w = np.polynomial.hermite.hermgauss(order)
    n = model.n
    C = np.linalg.cholesky(model.G)
    M = 2.0 * np.linalg.inv(C).T
    total = 0.0
    for combo in itertools.product(range(order), repeat=n):
        zz = z[list(combo)]
        total += np.prod(w[list(combo)]) * f(M @ zz)
    return float(total * math.pi ** (-n / 2))


@dataclass(frozen=True)
class HermiteGram:
    indices: list
    gram: np.ndarray
    expected: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.abs(self.gram - self.expected).max()) if self.gram.size else 0.0


def hermite_orthogonality(model: GaussianModel, k: int) -> HermiteGram:
    """⟨ℋ_Iℋ_J⟩ over all index tuples of length k, with (k!/2ᵏ)G_{i₁(j₁}⋯G_{|i_k|j_k)}."""
    if k > 4:
        raise ValueError("k ≤ 4")
    idx = list(itertools.product(range(model.n), repeat=k))
    H = [hermite_polynomial(model, I) for I in idx]
    m = len(idx)
    gram = np.zeros((m, m))
    expected = np.zeros((m, m))
    for a in range(m):
        for b in range(m):
            gram[a, b] = gaussian_average(model, H[a] * H[b])
            J = idx[b]
            acc = 0.0
            perms = list(itertools.permutations(range(k)))
            for p in perms:
                acc += np.prod([model.G[idx[a][r], J[p[r]]] for r in range(k)])
            expected[a, b] = math.factorial(k) / 2 ** k * acc / len(perms)
    return HermiteGram(idx, gram, expected)


# -- expansions ----------------------------------------------------------------


def _sym_G_product(Ginv: np.ndarray, k: int) -> np.ndarray:
    """G^{(i₁i₂}⋯G^{i_{2k−1}i_{2k})} as a rank-2k tensor."""
    if k == 0:
        return np.array(1.0)
    T = Ginv
    for _ in range(k - 1):
        T = np.multiply.outer(T, Ginv)
    return symmetrize_full(T)


def flat_expansion(model: GaussianModel, jets: Sequence, k_max: int, form: str = "contraction") -> np.ndarray:
    """c_k of (4πε)^{-n/2}∫exp(−⟨y,Gy⟩/4ε)φ for k ≤ k_max.

    ``jets[m]`` is the m-th derivative tensor of φ at the origin. ``form``
    selects the symmetrized contraction or the iterated Laplacian Δ_G^k.
    """
    n = model.n
    if len(jets) < 2 * k_max + 1:
        raise PreconditionError(f"need the φ-jet to order {2 * k_max}")
    pref = model.det ** -0.5
    out = np.zeros(k_max + 1)
    for k in range(k_max + 1):
        T = np.asarray(jets[2 * k], dtype=float).reshape((n,) * (2 * k))
        if form == "contraction":
            val = float(np.sum(_sym_G_product(model.Ginv, k) * T))
        elif form == "laplacian":
            for _ in range(k):
                T = np.tensordot(model.Ginv, T, axes=([0, 1], [0, 1]))
            val = float(T)
        else:
            raise ValueError(f"unknown form {form!r}")
        out[k] = pref * val / math.factorial(k)
    return out


def _f1_bracket(G: np.ndarray, S3: np.ndarray, S4: np.ndarray) -> float:
    """(1/12)(2G^{il}G^{jm} + 3G^{ij}G^{lm})G^{kn}Σ_{ijk}Σ_{lmn} − ¼G^{ij}G^{kl}Σ_{ijkl}."""
    ex = np.einsum("il,jm,kn,ijk,lmn->", G, G, G, S3, S3)
    tr = np.einsum("ij,lm,kn,ijk,lmn->", G, G, G, S3, S3)
    s4 = np.einsum("ij,kl,ijkl->", G, G, S4)
    return (2 * ex + 3 * tr) / 12 - s4 / 4


def morse_expansion(data: TaylorData, orders: Sequence[int] = (0, 1, 2), atol: float = 1e-12) -> dict:
    """F₀, F₁, F₂ from the closed formulas.

    F₂ requires [φ] = [∇φ] = 0. The Σ₃Σ₃ block of F₂ carries 1/12 and the
    Σ₄ block is −¼(G^{ij}G^{kl} + 4G^{ik}G^{jl})G^{ab}Σ_{ijab}; both follow
    from Wick counting and are checked against :func:`generic_expansion`.
    """
    G = data.model.Ginv
    S3, S4 = data.sigma3, data.sigma4
    p0, p1, p2, p3, p4 = data.phi
    gdet = float(np.linalg.det(data.metric))
    pref = math.sqrt(gdet / data.model.det)
    R = data.ricci
    out = {}
    if 0 in orders:
        out["F0"] = pref * p0
    if 1 in orders:
        val = np.einsum("ij,ij->", G, p2) - np.einsum("ij,pq,ipq,j->", G, G, S3, p1)
        val += (-np.einsum("ij,ij->", G, R) / 3 + _f1_bracket(G, S3, S4)) * p0
        out["F1"] = pref * float(val)
    if 2 in orders:
        if abs(p0) > atol or np.abs(p1).max() > atol:
            raise PreconditionError("F2 needs [φ] = [∇φ] = 0")
        val = 0.5 * np.einsum("ij,kl,ijkl->", G, G, p4)
        val -= (2 * np.einsum("ij,qk,pl,ipq,jkl->", G, G, G, S3, p3)
                + 3 * np.einsum("iq,jk,pl,ipq,jkl->", G, G, G, S3, p3)) / 3
        K = -(np.einsum("ij,kl->ijkl", G, G) + 2 * np.einsum("ik,jl->ijkl", G, G)) / 3
        M = np.einsum("ijkl,ij->kl", K, R)
        M -= 0.25 * (np.einsum("ij,kl,ab,ijab->kl", G, G, G, S4) + 4 * np.einsum("ik,jl,ab,ijab->kl", G, G, G, S4))
        M += (2 * np.einsum("ij,pr,qs,kl,ipq,jrs->kl", G, G, G, G, S3, S3)
              + 3 * np.einsum("ij,pq,rs,kl,ipq,jrs->kl", G, G, G, G, S3, S3)
              + 6 * np.einsum("ik,jl,pq,rs,ipq,jrs->kl", G, G, G, G, S3, S3)
              + 12 * np.einsum("ij,pq,kr,ls,ipq,jrs->kl", G, G, G, G, S3, S3)
              + 12 * np.einsum("ij,pr,kq,sl,ipq,jrs->kl", G, G, G, G, S3, S3)) / 12
        val += np.einsum("kl,kl->", M, p2)
        out["F2"] = pref * float(val)
    return out


def generic_expansion(data: TaylorData, k_max: int = 2) -> dict:
    """F_k = g^{1/2}G^{-1/2}⟨ψ_k⟩_G from the polynomial expansion of exp(−Σ̂/2ε)φ̂.

    Flat base metric only; orders of Σ above four are taken as zero, which
    is exact for F₁ and for F₂ when [φ] = [∇φ] = 0.
    """
    if not data.flat:
        raise PreconditionError("the generic route is implemented for a flat base metric")
    if k_max > 2:
        raise PreconditionError("the generic route stops at F2")
    if k_max == 2 and (data.phi[0] != 0.0 or np.any(data.phi[1])):
        # the Σ₃⁴ term would need twelfth moments
        raise PreconditionError("F2 needs [φ] = [∇φ] = 0")
    n = data.n
    order = 2 * k_max
    # series in r = √ε: dict r-power -> Polynomial in ξ
    u = {1: Polynomial.from_tensor(data.sigma3, 1 / 12), 2: Polynomial.from_tensor(data.sigma4, 1 / 48)}
    phi = {k: Polynomial.from_tensor(data.phi[k], 1 / math.factorial(k), n) for k in range(min(order, 4) + 1)}

    def mul(a, b):
        out = {}
        for ka, pa in a.items():
            for kb, pb in b.items():
                if ka + kb <= order:
                    out[ka + kb] = out.get(ka + kb, Polynomial(n)) + pa * pb
        return out

    expo = {0: Polynomial.constant(n, 1.0)}
    term = {0: Polynomial.constant(n, 1.0)}
    neg_u = {k: p * -1.0 for k, p in u.items()}
    for m in range(1, order + 1):
        term = {k: p * (1.0 / m) for k, p in mul(term, neg_u).items()}
        for k, p in term.items():
            expo[k] = expo.get(k, Polynomial(n)) + p
    psi = mul(expo, phi)
    pref = math.sqrt(float(np.linalg.det(data.metric)) / data.model.det)
    return {f"F{k}": pref * gaussian_average(data.model, psi.get(2 * k, Polynomial(n))) for k in range(k_max + 1)}


def ruse_synge_coefficients(metric, ricci, phi: Sequence) -> dict:
    """c₀, c₁ of the world-function integral and c₂ when [φ] = [∇φ] = 0.

    ``phi`` holds the jets of g^{-1/2}φ; only the Ricci-dependent part of c₂
    is kept, which is all that survives under the vanishing hypothesis.
    """
    g = np.asarray(metric, dtype=float)
    gi = np.linalg.inv(g)
    R = np.asarray(ricci, dtype=float)
    Rs = float(np.einsum("ij,ij->", gi, R))
    n = len(g)
    jets = list(phi) + [np.zeros((n,) * k) for k in range(len(phi), 5)]
    out = {"c0": float(jets[0]), "c1": float(np.einsum("ij,ij->", gi, jets[2]) - Rs / 3 * jets[0])}
    if abs(float(jets[0])) == 0.0 and not np.any(jets[1]):
        R_up = gi @ R @ gi
        out["c2"] = float(0.5 * np.einsum("ij,kl,ijkl->", gi, gi, jets[4]) - 2 / 3 * np.einsum("ij,ij->", R_up, jets[2])
                          - Rs / 3 * np.einsum("ij,ij->", gi, jets[2]))
    return out


# -- quadrature oracle -----------------------------------------------------


@dataclass(frozen=True)
class QuadratureResult:
    eps: np.ndarray
    values: np.ndarray
    errors: np.ndarray


def quadrature_oracle(sigma: Callable, phi: Callable, eps, domain, epsabs: float = 1e-12, limit: int = 400
                      ) -> QuadratureResult:
    """F(ε) by adaptive quadrature over a box ``domain`` containing the minimum at 0.

    ``domain`` is ``(a, b)`` in 1D or ``[(a1, b1), (a2, b2)]`` in 2D. The
    integral is rescaled by y = √ε z so the peak has unit width.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    dom = np.atleast_2d(np.asarray(domain, dtype=float))
    n = dom.shape[0]
    vals, errs = [], []
    for e in eps:
        r = math.sqrt(e)
        lims = [(a / r, b / r) for a, b in dom]
        trace = []
        if n == 1:
            f = lambda z: math.exp(-sigma(r * z) / (2 * e)) * phi(r * z)  # noqa: E731
            pts = [0.0] + [p for p in (-8.0, 8.0) if lims[0][0] < p < lims[0][1]]
            v, err, info = integrate.quad(f, *lims[0], points=pts, epsabs=epsabs, epsrel=1e-13, limit=limit,
                                          full_output=1)[:3]
            trace.append((float(e), float(v), float(err), int(info["neval"])))
            ok = err <= max(10 * epsabs, 1e-11 * abs(v))
        elif n == 2:
            f = lambda z1, z2: math.exp(-sigma(np.array([r * z1, r * z2])) / (2 * e)) * phi(  # noqa: E731
                np.array([r * z1, r * z2]))
            opts = [{"points": [0.0], "epsabs": epsabs, "epsrel": 1e-12, "limit": limit}] * 2
            v, err = integrate.nquad(f, lims, opts=opts)
            trace.append((float(e), float(v), float(err)))
            ok = err <= max(100 * epsabs, 1e-10 * abs(v))
        else:
            raise ValueError("quadrature oracle supports n = 1, 2")
        if not ok:
            raise QuadratureError(f"quadrature at ε={e:.3e} did not converge (error {err:.2e})", trace)
        vals.append(v * (4 * math.pi) ** (-n / 2))
        errs.append(err * (4 * math.pi) ** (-n / 2))
    return QuadratureResult(eps, np.array(vals), np.array(errs))


# -- symmetrization identity -----------------------------------------------


@dataclass(frozen=True)
class SymmetrizationCheck:
    lhs: float
    rhs: float
    ok: bool


def symmetrization_identity_check(model: GaussianModel, S3, rtol: float = 1e-12) -> SymmetrizationCheck:
    """G^{ij}G^{kl}G^{mn}Σ_{(ijk}Σ_{lmn)} = (1/5)G^{ij}G^{kl}G^{mn}(2Σ_{ikm}Σ_{jln} + 3Σ_{ijm}Σ_{kln})."""
    S3 = np.asarray(S3, dtype=float)
    G = model.Ginv
    T = symmetrize_full(np.multiply.outer(S3, S3))
    lhs = float(np.einsum("ij,kl,mn,ijklmn->", G, G, G, T))
    rhs = float((2 * np.einsum("ij,kl,mn,ikm,jln->", G, G, G, S3, S3)
                 + 3 * np.einsum("ij,kl,mn,ijm,kln->", G, G, G, S3, S3)) / 5)
    ok = abs(lhs - rhs) <= rtol * max(1.0, abs(lhs), abs(rhs))
    return SymmetrizationCheck(lhs, rhs, bool(ok))
