"""Small-ε regression of spectral traces and comparison with geometric coefficients.

Along a fixed direction (t, s) the traces behave as

    (4πε)^{n/2} X(εt, εs)   ~ Σ_k B_k(t, s) ε^k
    (4πε)^{n/2} ε Y(εt, εs) ~ Σ_k C_k(t, s) ε^k

so a polynomial least-squares fit in ε recovers the coefficients.  The ε
window must stay inside the region where the truncation tail of the
discretized spectrum is negligible; see ``default_window``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .spectral_engine import SpectralPair, TraceGrid, TruncationError

__all__ = [
    "AsymFit",
    "FitError",
    "RelationRow",
    "RelationTable",
    "TRACE_SHIFT",
    "default_window",
    "sample_epsilon",
    "epsilon_fit",
    "power_law_slope",
    "relation_checks",
]

MAX_CONDITION = 1e8

# extra power of ε multiplied in before fitting: Y and Φ start one order lower
TRACE_SHIFT = {"Theta": 0, "X": 0, "Psi": 0, "H": 1, "Y": 1, "Phi": 1}


class FitError(RuntimeError):
    """The regression is ill-posed (too few points or ill-conditioned)."""


@dataclass
class AsymFit:
    """Fitted expansion coefficients of one trace along one direction."""

    trace_tag: str
    t: float
    s: Optional[float]
    eps: np.ndarray
    leading_power: float
    coefficients: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    condition: float
    k_max: int
    residual_history: list = field(default_factory=list)
    scaled: Optional[np.ndarray] = None

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.abs(np.diag(self.covariance)))

    def coefficient(self, k: int) -> float:
        return float(self.coefficients[k])

    def to_dict(self) -> dict:
        return {
            "trace": self.trace_tag,
            "t": self.t,
            "s": self.s,
            "eps": [float(e) for e in self.eps],
            "leading_power": self.leading_power,
            "coefficients": [float(c) for c in self.coefficients],
            "sigma": [float(x) for x in self.sigma],
            "residual_norm": self.residual_norm,
            "condition": self.condition,
            "k_max": self.k_max,
        }


def default_window(resolved: float, t: float, s: float = 0.0, points: int = 12, tol: float = 1e-12,
                   eps_max: float = 1e-2) -> np.ndarray:
    """Log-spaced ε grid whose lower end keeps the 1D Weyl tail below ``tol``.

    The lower end solves Γ(½, ε(t+s)λ_res)/Γ(½) = tol, i.e. it is the smallest
    ε for which every unresolved mode is damped by the requested factor.
    ``resolved`` is the resolved eigenvalue of the squared operator.
    """
    scale = (t + s) * resolved
    if scale <= 0:
        raise ValueError("direction and resolved eigenvalue must be positive")
    x = special.gammainccinv(0.5, tol)
    eps_min = x / scale
    if eps_min >= eps_max:
        raise TruncationError(
            f"grid too coarse: the truncation-safe window starts at ε = {eps_min:.3g} > {eps_max:.3g}"
        )
    return np.geomspace(eps_min, eps_max, points)


def sample_epsilon(pair: SpectralPair, tag: str, t: float, s: float, eps, strict: bool = True) -> TraceGrid:
    """Evaluate one trace along (εt, εs) for each ε; the tail bound travels with it.

    ``tag`` is one of Theta (uses the plus operator and t), X, Y, Psi, Phi.
    """
    eps = np.asarray(eps, dtype=float)
    vals, tails = [], []
    for e in eps:
        if tag == "Theta":
            vals.append(pair.theta("+", e * t))
            tails.append(pair.plus.theta_tail(e * t))
            continue
        tail = pair.tail_X(e * t, e * s)
        if tag == "X":
            v = pair.X(e * t, e * s)
        elif tag == "Y":
            v = pair.Y(e * t, e * s)
            tail *= pair._mu_scale(0, 0)
        elif tag == "Psi":
            v = pair.Psi(e * t, e * s)
            tail += pair.tail_X(e * s, e * t)
        elif tag == "Phi":
            v = pair.Phi(e * t, e * s)
            tail = (tail + pair.tail_X(e * s, e * t)) * pair._mu_scale(0, 0)
        else:
            raise ValueError(f"unknown trace tag {tag!r}")
        vals.append(v)
        tails.append(tail)
    vals = np.array(vals)
    tails = np.array(tails)
    if strict:
        # differences (Ψ, Φ) can vanish, so measure the tail against the trace size
        ref = np.array([pair.theta("+", e * (t + (s or 0.0))) for e in eps])
        bad = np.where(tails > pair.tol * np.maximum(np.abs(vals), ref))[0]
        if bad.size:
            raise TruncationError(
                f"{tag} at ε = {eps[bad[0]]:.3g} has truncation tail {tails[bad[0]]:.2e}; move the window up"
            )
    return TraceGrid(tag, np.array([t]), None if tag == "Theta" else np.array([s]), vals, tails, eps=eps)


def _solve(eps: np.ndarray, y: np.ndarray, k_max: int):
    cols = np.arange(k_max + 1)
    emax = eps.max()
    A = (eps[:, None] / emax) ** cols[None, :]
    w = np.sqrt(eps ** (-(k_max + 1)))
    Aw = A * w[:, None]
    yw = y * w
    coef_scaled, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    cond = float(np.linalg.cond(Aw))
    resid = yw - Aw @ coef_scaled
    dof = max(len(eps) - len(cols), 1)
    sigma2 = float(resid @ resid) / dof
    # floor at rounding level of the data
    sigma2 = max(sigma2, (np.finfo(float).eps * float(np.max(np.abs(yw)))) ** 2)
    AtA_inv = np.linalg.pinv(Aw.T @ Aw)
    scale = emax ** (-cols.astype(float))
    coef = coef_scaled * scale
    cov = sigma2 * AtA_inv * np.outer(scale, scale)
    raw_resid = y - (eps[:, None] ** cols[None, :]) @ coef
    return coef, cov, cond, float(np.linalg.norm(raw_resid))


def epsilon_fit(grid: TraceGrid, n: int, k_max: int = 2, trace_tag: Optional[str] = None) -> AsymFit:
    """Weighted least squares of the rescaled trace against Σ_{k ≤ k_max} c_k ε^k.

    Rows carry weights ε^{-k_max-1} so that every power contributes at a
    comparable level.  The design matrix is column-equilibrated (powers of
    ε/ε_max) and its condition number is recorded; above 1e8 the fit is
    rejected.  The covariance adds to the residual-based estimate the squared
    change of each coefficient when one more power is fitted, so the error
    bars include the truncation of the series.
    """
    tag = trace_tag or grid.tag
    if grid.eps is None:
        raise FitError("trace grid carries no ε values")
    if k_max > 2:
        raise FitError("coefficients beyond k = 2 are not fitted")
    eps = np.asarray(grid.eps, dtype=float)
    if np.any(eps <= 0):
        raise FitError("ε must be positive")
    if len(eps) < k_max + 2:
        raise FitError(f"need at least {k_max + 2} ε points for k_max = {k_max}")
    shift = TRACE_SHIFT.get(tag, 0)
    y = (4 * math.pi * eps) ** (n / 2) * eps**shift * np.asarray(grid.values, dtype=float)

    history = []
    for k in range(k_max + 1):
        history.append(_solve(eps, y, k)[3])
    if any(history[i + 1] > history[i] * (1 + 1e-8) + 1e-300 for i in range(len(history) - 1)):
        warnings.warn(f"{tag}: residual does not decrease with k_max; the ε window is probably misplaced",
                      RuntimeWarning, stacklevel=2)

    coef, cov, cond, rnorm = _solve(eps, y, k_max)
    if cond > MAX_CONDITION:
        raise FitError(f"{tag}: design matrix condition number {cond:.2e} exceeds {MAX_CONDITION:.0e}")
    if len(eps) >= k_max + 3:
        coef_up = _solve(eps, y, k_max + 1)[0][: k_max + 1]
        cov = cov + np.diag((coef_up - coef) ** 2)

    t = float(np.atleast_1d(grid.t)[0])
    s = None if grid.s is None else float(np.atleast_1d(grid.s)[0])
    return AsymFit(tag, t, s, eps, -n / 2 - shift, coef, cov, rnorm, cond, k_max, history, y)


def power_law_slope(fit: AsymFit) -> float:
    """Log-log slope of y(ε) − c₀ − c₁ε; a clean expansion gives 2."""
    if fit.scaled is None or fit.k_max < 1:
        raise FitError("fit carries no data or has k_max < 1")
    r = fit.scaled - fit.coefficients[0] - fit.coefficients[1] * fit.eps
    good = np.abs(r) > 0
    slope, _ = np.polyfit(np.log(fit.eps[good]), np.log(np.abs(r[good])), 1)
    return float(slope)


@dataclass
class RelationRow:
    name: str
    lhs: float
    rhs: float
    tol: float
    atol: float

    @property
    def error(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def passed(self) -> bool:
        return self.error <= self.atol + self.tol * abs(self.rhs)


@dataclass
class RelationTable:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def format(self) -> str:
        out = []
        for r in self.rows:
            flag = "PASS" if r.passed else "FAIL"
            out.append(f"{flag}  {r.name:<28s} lhs={r.lhs:.12g}  rhs={r.rhs:.12g}  err={r.error:.3e}")
        return "\n".join(out)


def relation_checks(fits: dict, reports: dict, n: int, tol: float = 1e-5, atol: float = 1e-9) -> RelationTable:
    """Cross-check fitted coefficients against each other and against reference values.

    ``fits`` may contain AsymFit objects under the keys ``X``, ``X_swap``
    (direction (s, t)), ``Psi``, ``Y``, ``Y_swap`` and ``Phi``, all along the
    same (t, s).  ``reports`` may contain the classical coefficients
    ``A0+``, ``A1+``, ``A0-``, ``A1-`` and any reference values keyed like the
    fitted ones (``B0``, ``B1``, ``C0``, ``C1``, ``Psi0`` …).
    """
    rows = []
    fx, fy = fits.get("X"), fits.get("Y")
    any_fit = next(iter(fits.values()))
    t, s = any_fit.t, any_fit.s
    for k in range(any_fit.k_max + 1):
        if fx is not None and k <= fx.k_max and f"B{k}" in reports:
            rows.append(RelationRow(f"B{k}(t,s) fit vs reference", fx.coefficient(k), reports[f"B{k}"], tol, atol))
        if fy is not None and k <= fy.k_max and f"C{k}" in reports:
            rows.append(RelationRow(f"C{k}(t,s) fit vs reference", fy.coefficient(k), reports[f"C{k}"], tol, atol))
        have_A = f"A{k}+" in reports and f"A{k}-" in reports
        if have_A and all(key in fits for key in ("Psi", "X", "X_swap")):
            A = reports[f"A{k}+"] + reports[f"A{k}-"]
            rhs = (t + s) ** (k - n / 2) * A - fits["X"].coefficient(k) - fits["X_swap"].coefficient(k)
            rows.append(RelationRow(f"Psi{k} combination", fits["Psi"].coefficient(k), rhs, tol, atol))
        if have_A and all(key in fits for key in ("Phi", "Y", "Y_swap")):
            A = reports[f"A{k}+"] + reports[f"A{k}-"]
            rhs = (-(k - n / 2) * (t + s) ** (k - 1 - n / 2) * A
                   - fits["Y"].coefficient(k) - fits["Y_swap"].coefficient(k))
            rows.append(RelationRow(f"Phi{k} combination", fits["Phi"].coefficient(k), rhs, tol, atol))
        for key in ("Psi", "Phi"):
            if key in fits and f"{key}{k}" in reports:
                rows.append(RelationRow(f"{key}{k} fit vs reference", fits[key].coefficient(k),
                                        reports[f"{key}{k}"], tol, atol))
    return RelationTable(rows)
