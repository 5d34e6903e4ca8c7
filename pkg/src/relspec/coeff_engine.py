"""Closed-form heat-trace coefficients of single operators and operator pairs.

Densities are evaluated pointwise on the grid and integrated with the
periodic trapezoidal rule.  Every displayed block of the b₁ and c₁ formulas
is kept as a named sub-term so a discrepancy against the spectral path can be
localized.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor_core import CombinedGeometry, GeometryError, OperatorGeometry, combine, symmetrize

__all__ = [
    "CoefficientReport",
    "W_HESS_COEFFICIENT",
    "classical_A",
    "dirac_H",
    "b_coeffs",
    "c_coeffs",
    "psi_coeffs",
    "phi_coeffs",
    "equal_operator_B",
    "equal_operator_C",
    "shifted_B",
    "shifted_C",
]

# Coefficient of G^{ij}(W_{ij} + W_i W_j) inside b₁.  Re-deriving b₁ from the
# Laplace-method coefficient F₁ gives 1; the spectral fit on a variable metric
# confirms it (see tests/test_coeff_engine.py).
W_HESS_COEFFICIENT = 1.0


@dataclass
class CoefficientReport:
    """One coefficient, its density (if local) and its sub-term breakdown."""

    label: str
    value: float
    t: Optional[float] = None
    s: Optional[float] = None
    density: Optional[np.ndarray] = None
    method: str = "geometric"
    subterms: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)


def _tr(x: np.ndarray) -> np.ndarray:
    return np.trace(x, axis1=-2, axis2=-1)


def _real(x) -> np.ndarray:
    return np.real_if_close(np.asarray(x), tol=1e6).real if np.iscomplexobj(x) else np.asarray(x)


def classical_A(geom: OperatorGeometry) -> dict:
    """A₀ = ∫g^{1/2} tr I and A₁ = ∫g^{1/2} tr(R/6 − Q)."""
    man = geom.manifold
    f = geom.fiber_dim
    _, R = geom.curvature
    d0 = geom.sqrt_det * f
    d1 = geom.sqrt_det * np.real(R * f / 6.0 - _tr(geom.potential))
    return {
        "A0": CoefficientReport("A0", float(man.integrate(d0)), density=d0),
        "A1": CoefficientReport("A1", float(man.integrate(d1)), density=d1),
    }


def dirac_H(geom: OperatorGeometry) -> dict:
    """H₀ = ∫g^{1/2} tr S and H₁ = ∫g^{1/2} tr S(R/6 − Q), total derivatives dropped."""
    if geom.dirac is None:
        raise GeometryError("H coefficients need Dirac data")
    man = geom.manifold
    S = geom.dirac.S
    _, R = geom.curvature
    f = geom.fiber_dim
    d0 = geom.sqrt_det * np.real(_tr(S))
    inner = R[:, None, None] / 6.0 * np.eye(f) - geom.potential
    d1 = geom.sqrt_det * np.real(_tr(S @ inner))
    return {
        "H0": CoefficientReport("H0", float(man.integrate(d0)), density=d0),
        "H1": CoefficientReport("H1", float(man.integrate(d1)), density=d1),
    }


def _zero_ricci(cg: CombinedGeometry, ricci):
    if ricci is None:
        return None
    return np.broadcast_to(np.asarray(ricci, dtype=float), (cg.manifold.npts, cg.n, cg.n))


def _curvatures(cg: CombinedGeometry):
    ric_p, R_p = cg.plus.curvature
    ric_m, R_m = cg.minus.curvature
    ric_g, _ = cg.ricci_g
    return ric_p, R_p, ric_m, R_m, ric_g


def b_coeffs(cg: CombinedGeometry, w_coefficient: float = W_HESS_COEFFICIENT) -> dict:
    """b₀, b₁ densities and their integrals B₀, B₁ at the geometry's (t, s)."""
    t, s = cg.t, cg.s
    man = cg.manifold
    f = cg.plus.fiber_dim
    Gi = cg.G_inv
    ric_p, R_p, ric_m, R_m, ric_g = _curvatures(cg)
    Qp, Qm = cg.plus.potential, cg.minus.potential

    sub = {}
    sub["t(R+/6-Q+)"] = t * np.real(R_p * f / 6.0 - _tr(Qp))
    sub["s(R-/6-Q-)"] = s * np.real(R_m * f / 6.0 - _tr(Qm))
    sub["ts:ricci"] = t * s * f / 6.0 * np.einsum("pij,pij->p", Gi, ric_p + ric_m - 2 * ric_g)
    WW = cg.W_hess + np.einsum("pi,pj->pij", cg.W_vec, cg.W_vec)
    sub["ts:W"] = t * s * f * w_coefficient * np.einsum("pij,pij->p", Gi, WW)
    sub["ts:Sigma3W"] = -t * s * f * np.einsum("pij,pkl,pikl,pj->p", Gi, Gi, cg.Sigma3, cg.W_vec)
    sub["ts:Sigma4"] = -0.25 * t * s * f * np.einsum("pij,pkl,pijkl->p", Gi, Gi, cg.Sigma4)
    sub["ts:Sigma3^2"] = t * s * f / 12.0 * (
        2 * np.einsum("pil,pjm,pkn,pijk,plmn->p", Gi, Gi, Gi, cg.Sigma3, cg.Sigma3)
        + 3 * np.einsum("pij,plm,pkn,pijk,plmn->p", Gi, Gi, Gi, cg.Sigma3, cg.Sigma3)
    )
    dC = cg.C_plus - cg.C_minus
    sub["ts:C"] = t * s * np.real(_tr(np.einsum("pij,piab,pjbc->pac", Gi, dC, dC)))

    b1 = sum(sub.values())
    b0 = np.full(man.npts, float(f))
    w = cg.g_det_sqrt
    rep = {
        "b0": CoefficientReport("b0", float(f), t, s, density=b0),
        "b1": CoefficientReport("b1", float(man.integrate(w * b1)), t, s, density=b1),
        "B0": CoefficientReport("B0", float(man.integrate(w * b0)), t, s),
        "B1": CoefficientReport("B1", float(man.integrate(w * b1)), t, s,
                                subterms={k: float(man.integrate(w * v)) for k, v in sub.items()}),
    }
    return rep


# ---------------------------------------------------------------------------
# Dirac coefficients


def _antisymmetrize(T: np.ndarray, axes) -> np.ndarray:
    """Signed average of ``T`` over permutations of ``axes``."""
    axes = list(axes)
    acc = np.zeros_like(T)
    perms = list(itertools.permutations(range(len(axes))))
    for perm in perms:
        order = list(range(T.ndim))
        for a, b in zip(axes, perm):
            order[a] = axes[b]
        acc = acc + _perm_sign(perm) * np.transpose(T, order)
    return acc / len(perms)


def _gamma2(gam: np.ndarray) -> np.ndarray:
    """γ^{ij} = γ^{[i}γ^{j]}, shape (P, n, n, f, f)."""
    return _antisymmetrize(np.einsum("piab,pjbc->pijac", gam, gam), (1, 2))


def _gamma3(gam: np.ndarray) -> np.ndarray:
    """γ^{ijk} = γ^{[i}γ^jγ^{k]}, shape (P, n, n, n, f, f)."""
    return _antisymmetrize(np.einsum("piab,pjbc,pkcd->pijkad", gam, gam, gam), (1, 2, 3))


def _perm_sign(perm) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def _cov_endo(man, A, X):
    """∂_j X + [A_j, X] for an endomorphism field X."""
    return man.grad(X) + np.einsum("pjab,pbc->pjac", A, X) - np.einsum("pab,pjbc->pjac", X, A)


def c_coeffs(cg: CombinedGeometry) -> dict:
    """c₀, c₁ densities and C₀, C₁ for a pair of Dirac operators."""
    plus, minus = cg.plus, cg.minus
    if plus.dirac is None or minus.dirac is None:
        raise GeometryError("c coefficients need Dirac data on both operators")
    if cg.V6 is None:
        raise GeometryError("combined geometry was built without V")
    t, s = cg.t, cg.s
    man = cg.manifold
    gam_p = plus.dirac.gamma_field
    gam_m = minus.dirac.gamma_field
    Sp, Sm = plus.dirac.S, minus.dirac.S
    g = cg.g
    Gi = cg.G_inv
    gp, gm = plus.g_low, minus.g_low
    ric_p, R_p, ric_m, R_m, ric_g = _curvatures(cg)
    Rc_p, Rc_m = plus.connection_curvature, minus.connection_curvature

    PM = np.einsum("paxy,pbyz->pabxz", gam_p, gam_m)  # γ₊^p γ₋^q
    MP = np.einsum("pbxy,payz->pabxz", gam_m, gam_p)  # γ₋^q γ₊^p, stored [p, q]
    trPM = _tr(PM)
    comm = PM - MP

    sub = {}
    c0 = 0.5 * np.real(np.einsum("pij,pij->p", g, trPM))

    coef_p = 0.5 * g * R_p[:, None, None] - np.einsum("pbi,pij,pja->pab", g, plus.g_inv, ric_p)
    coef_m = 0.5 * g * R_m[:, None, None] - np.einsum("pai,pij,pjb->pab", g, minus.g_inv, ric_m)
    sub["t:ricci"] = t / 6.0 * np.real(np.einsum("pab,pab->p", coef_p, trPM))
    sub["s:ricci"] = s / 6.0 * np.real(np.einsum("pab,pab->p", coef_m, trPM))

    g2p, g2m = _gamma2(gam_p), _gamma2(gam_m)
    if plus.n >= 3:
        g3p, g3m = _gamma3(gam_p), _gamma3(gam_m)
        sub["t:curvR"] = 0.25 * t * np.real(np.einsum("pab,pbxy,paijyz,pijzx->p", g, gam_m, g3p, Rc_p))
        sub["s:curvR"] = 0.25 * s * np.real(np.einsum("pab,paxy,pbijyz,pijzx->p", g, gam_p, g3m, Rc_m))
    else:
        # three antisymmetrized indices need n >= 3
        sub["t:curvR"] = np.zeros(man.npts)
        sub["s:curvR"] = np.zeros(man.npts)

    sub["S+S-"] = np.real(_tr(Sp @ Sm))
    Sp2, Sm2 = Sp @ Sp, Sm @ Sm
    sub["t:S+^2"] = -0.5 * t * np.real(np.einsum("pab,pabxy,pyx->p", g, MP, Sp2))
    sub["s:S-^2"] = -0.5 * s * np.real(np.einsum("pab,pabxy,pyx->p", g, PM, Sm2))

    dSp = _cov_endo(man, plus.connection, Sp)
    dSm = _cov_endo(man, minus.connection, Sm)
    sub["t:dS+"] = -0.5 * t * np.real(1j * np.einsum("pqa,pqxy,pajyz,pjzx->p", g, gam_m, g2p, dSp))
    sub["s:dS-"] = -0.5 * s * np.real(1j * np.einsum("paq,paxy,pqjyz,pjzx->p", g, gam_p, g2m, dSm))

    ts = t * s
    # g⁺_{p(k} g⁻_{l)q}, stored [k, l, p, q]
    sym_gp_gm = 0.5 * (np.einsum("pak,plb->pklab", gp, gm) + np.einsum("pal,pkb->pklab", gp, gm))
    ricsum = ric_p + ric_m - 2 * ric_g
    coefR = np.einsum("pkl,pij,pij->pkl", Gi, Gi, ricsum) + 2 * np.einsum("pik,pjl,pij->pkl", Gi, Gi, ricsum)
    sub["ts:ricci"] = ts / 12.0 * np.real(np.einsum("pkl,pklab,pab->p", coefR, sym_gp_gm, trPM))

    GG = symmetrize(np.einsum("pij,pkl->pijkl", Gi, Gi), (1, 2, 3, 4))
    sub["ts:V"] = ts / 8.0 * np.real(np.einsum("pijkl,pabijkl,pab->p", GG, cg.V6, trPM))

    Wp, Wm = cg.W_plus, cg.W_minus
    Xp = symmetrize(np.einsum("pma,pmjk,plb->pabjkl", gp, Wp, gm), (3, 4, 5))
    Xm = symmetrize(np.einsum("pmb,pmjk,pla->pabjkl", gm, Wm, gp), (3, 4, 5))
    sub["ts:N"] = 0.75 * ts * np.real(np.einsum("pjkl,pabjkl,pab->p", cg.N, Xp + Xm, trPM))
    sub["ts:M"] = 0.5 * ts * np.real(np.einsum("pkl,pklab,pab->p", cg.M, sym_gp_gm, trPM))

    dC = cg.C_plus - cg.C_minus
    Gam = cg.Gamma
    # ∇^{g,𝒜}_k ΔC_l = ∂_k ΔC_l − Γ^m_{kl} ΔC_m + [𝒜_k, ΔC_l]
    d = man.grad(dC)  # (P, k, l, f, f)
    d = d - np.einsum("pmkl,pmab->pklab", Gam, dC)
    d = d + np.einsum("pkab,plbc->pklac", cg.A_comb, dC) - np.einsum("plab,pkbc->pklac", dC, cg.A_comb)
    sub["ts:dC"] = -0.75 * ts * np.real(np.einsum("pijkl,pja,pib,pabxy,pklyx->p", GG, gp, gm, comm, d))

    blockW = np.einsum("pijkl,pma,pmij,pkb->pabl", GG, gp, Wp, gm) + np.einsum("pijkl,pka,pmb,pmij->pabl", GG, gp, gm, Wm)
    blockN = np.einsum("pjkl,pak,pjb->pabl", cg.N, gp, gm)
    sub["ts:C-lin"] = -0.75 * ts * np.real(np.einsum("pabl,pabxy,plyx->p", blockW + blockN, comm, dC))

    Cp, Cm = cg.C_plus, cg.C_minus
    pref = np.einsum("pai,pjb,pijkl->pabkl", gp, gm, GG)  # g⁺_{pi} g⁻_{jq} G^{(ij}G^{kl)}
    CC = np.einsum("pkxy,plyz->pklxz", Cp, Cp) + np.einsum("pkxy,plyz->pklxz", Cm, Cm)
    anti_sum = PM + MP
    term = np.einsum("pabkl,pklxy,pabyx->p", pref, CC, anti_sum)
    term = term - 2 * np.einsum("pabkl,pkxy,plyz,pabzx->p", pref, Cp, Cm, PM)
    term = term - 2 * np.einsum("pabkl,plxy,pkyz,pabzx->p", pref, Cm, Cp, MP)
    sub["ts:CC"] = 0.75 * ts * np.real(term)

    c1 = sum(sub.values())
    w = cg.g_det_sqrt
    return {
        "c0": CoefficientReport("c0", float(man.integrate(w * c0)), t, s, density=c0),
        "c1": CoefficientReport("c1", float(man.integrate(w * c1)), t, s, density=c1),
        "C0": CoefficientReport("C0", float(man.integrate(w * c0)), t, s),
        "C1": CoefficientReport("C1", float(man.integrate(w * c1)), t, s,
                                subterms={k: float(man.integrate(w * v)) for k, v in sub.items()}),
    }


# ---------------------------------------------------------------------------
# relative invariants


def psi_coeffs(plus: OperatorGeometry, minus: OperatorGeometry, t: float, s: float, **kw) -> dict:
    """Ψ₀, Ψ₁ = (t+s)^{k-n/2}(A_k⁺ + A_k⁻) − B_k(t,s) − B_k(s,t)."""
    n = plus.n
    Ap, Am = classical_A(plus), classical_A(minus)
    bts = b_coeffs(combine(plus, minus, t, s, with_v6=False), **kw)
    bst = b_coeffs(combine(plus, minus, s, t, with_v6=False), **kw)
    out = {}
    for k in (0, 1):
        val = ((t + s) ** (k - n / 2) * (Ap[f"A{k}"].value + Am[f"A{k}"].value)
               - bts[f"B{k}"].value - bst[f"B{k}"].value)
        out[f"Psi{k}"] = CoefficientReport(f"Psi{k}", val, t, s)
    return out


def phi_coeffs(plus: OperatorGeometry, minus: OperatorGeometry, t: float, s: float) -> dict:
    """Φ₀, Φ₁ = −(k − n/2)(t+s)^{k-1-n/2}(A_k⁺ + A_k⁻) − C_k(t,s) − C_k(s,t)."""
    n = plus.n
    Ap, Am = classical_A(plus), classical_A(minus)
    cts = c_coeffs(combine(plus, minus, t, s))
    cst = c_coeffs(combine(plus, minus, s, t))
    out = {}
    for k in (0, 1):
        val = (-(k - n / 2) * (t + s) ** (k - 1 - n / 2) * (Ap[f"A{k}"].value + Am[f"A{k}"].value)
               - cts[f"C{k}"].value - cst[f"C{k}"].value)
        out[f"Phi{k}"] = CoefficientReport(f"Phi{k}", val, t, s)
    return out


# closed forms for special pairs -------------------------------------------


def equal_operator_B(A: dict, n: int, t: float, s: float) -> dict:
    """B_k = (t+s)^{k-n/2} A_k when both operators coincide."""
    return {f"B{k}": (t + s) ** (k - n / 2) * A[f"A{k}"].value for k in (0, 1)}


def equal_operator_C(A: dict, n: int, t: float, s: float) -> dict:
    """C_k = −(k − n/2)(t+s)^{k-1-n/2} A_k when both Dirac operators coincide."""
    return {f"C{k}": -(k - n / 2) * (t + s) ** (k - 1 - n / 2) * A[f"A{k}"].value for k in (0, 1)}


def shifted_B(A_minus: dict, n: int, t: float, s: float, m2: float) -> dict:
    """L₊ = L₋ + m²: B₀ = (t+s)^{-n/2}A₀, B₁ = (t+s)^{1-n/2}A₁ − t(t+s)^{-n/2}m²A₀."""
    A0, A1 = A_minus["A0"].value, A_minus["A1"].value
    return {"B0": (t + s) ** (-n / 2) * A0, "B1": (t + s) ** (1 - n / 2) * A1 - t * (t + s) ** (-n / 2) * m2 * A0}


def shifted_C(A_minus: dict, n: int, t: float, s: float, m2: float) -> dict:
    """D₊ = D₋ + M, M anticommuting with D₋ and M² = m²."""
    A0, A1 = A_minus["A0"].value, A_minus["A1"].value
    return {
        "C0": (n / 2) * (t + s) ** (-1 - n / 2) * A0,
        "C1": (n / 2 - 1) * (t + s) ** (-n / 2) * A1 - (n / 2) * t * (t + s) ** (-1 - n / 2) * m2 * A0,
    }
