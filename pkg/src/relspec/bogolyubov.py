"""Thermal kernels h_b, h_f, h₀ and the Bogolyubov invariants B_b(β), B_f(β).

Each kernel has a theta-like series (primary) and a principal-value integral
(oracle). The invariants are double integrals of the kernels against the
relative traces Ψ, Φ, done by composite Simpson rules in log-time. The
Laplace transform of each kernel is a thermal occupation function,
∫h_b(t)e^{−tω²}dt = 1/(e^ω − 1) and so on, which gives an independent trace
formula for commuting or spectrally resolved pairs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "KERNELS",
    "KernelValue",
    "h_series",
    "h_integral",
    "h_kernel",
    "occupation",
    "TraceLattice",
    "SupportError",
    "BogolyubovResult",
    "bogolyubov_invariant",
    "trace_formula",
    "SERIES_MAX_T",
]

KERNELS = ("b", "f", "0")
SERIES_MAX_T = 100.0
_PREF = (4 * math.pi) ** -0.5


@dataclass(frozen=True)
class KernelValue:
    value: float
    error: float
    route: str
    terms: int


def _series_terms(tag: str, t: np.ndarray, rtol: float = 1e-15) -> np.ndarray:
    """Partial sums of the series bracket, truncated when a term drops below rtol of the sum."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    kmax = int(math.ceil(math.sqrt(4 * t.max() * (-math.log(rtol) + 10)))) + 3
    if tag == "0":
        k = 2 * np.arange(kmax) + 1.0
        sign = np.ones(kmax)
    else:
        k = np.arange(1, kmax + 1, dtype=float)
        sign = np.where(k % 2 == 1, 1.0, -1.0) if tag == "f" else np.ones(kmax)
    terms = sign[None, :] * k[None, :] * np.exp(-np.outer(1 / (4 * t), k * k))
    return terms


def h_series(tag: str, t) -> np.ndarray:
    """(4π)^{-1/2}t^{-3/2}Σ c_k k e^{−k²/4t}, vectorized over t."""
    if tag not in KERNELS:
        raise ValueError(f"unknown kernel {tag!r}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise ValueError("kernels are defined for t > 0")
    s = _series_terms(tag, t).sum(axis=1)
    return _PREF * t ** -1.5 * s


def _pair(u, p0, t):
    """(p0+u)e^{−t(p0+u)²} − (p0−u)e^{−t(p0−u)²}."""
    return (p0 + u) * np.exp(-t * (p0 + u) ** 2) - (p0 - u) * np.exp(-t * (p0 - u) ** 2)


def h_integral(tag: str, t: float, epsrel: float = 1e-13) -> KernelValue:
    """(1/π)PV∫₀^∞ w(p)e^{−tp²}dp with the integrand folded symmetrically about each pole.

    w = p tan(p/2), p cot(p/2), p/sin p for tags f, b, 0. Around a pole p₀
    the two sides are combined exactly, e.g. tan((p₀ ± u)/2) = ∓cot(u/2).
    """
    if tag not in KERNELS:
        raise ValueError(f"unknown kernel {tag!r}")
    if t <= 0:
        raise ValueError("kernels are defined for t > 0")
    p_end = math.sqrt(45.0 / t) + 2 * math.pi
    total = 0.0
    err = 0.0
    opts = dict(epsabs=0.0, epsrel=epsrel, limit=200)

    def add(f, a, b):
        nonlocal total, err
        v, e = integrate.quad(f, a, b, **opts)
        total += v
        err += e

    def w_regular(p):
        if tag == "f":
            return p * math.tan(p / 2)
        if tag == "b":
            return 2.0 if p == 0 else p / math.tan(p / 2)
        return 1.0 if p == 0 else p / math.sin(p)

    if tag == "f":
        # poles at (2j+1)π; each block [2jπ, 2(j+1)π] is folded about its pole
        j = 0
        while 2 * j * math.pi < p_end:
            p0 = (2 * j + 1) * math.pi
            add(lambda u, p0=p0: _cot(u / 2) * -_pair(u, p0, t), 0.0, math.pi)
            j += 1
    elif tag == "b":
        add(lambda p: w_regular(p) * math.exp(-t * p * p), 0.0, math.pi)
        j = 1
        while (2 * j - 1) * math.pi < p_end:
            p0 = 2 * j * math.pi
            add(lambda u, p0=p0: _cot(u / 2) * _pair(u, p0, t), 0.0, math.pi)
            j += 1
    else:
        add(lambda p: w_regular(p) * math.exp(-t * p * p), 0.0, math.pi / 2)
        j = 1
        while (j - 0.5) * math.pi < p_end:
            p0 = j * math.pi
            sgn = -1.0 if j % 2 else 1.0
            add(lambda u, p0=p0, sgn=sgn: sgn * _pair(u, p0, t) / math.sin(u), 0.0, math.pi / 2)
            j += 1
    return KernelValue(total / math.pi, err / math.pi, "integral", j)


def _cot(x):
    return math.cos(x) / math.sin(x)


def h_kernel(tag: str, t: float, route: str = "auto") -> KernelValue:
    """Kernel value by the series (default) or the principal-value integral.

    The series is used for t ≤ SERIES_MAX_T; beyond that the alternating
    sums lose digits and the integral route is taken, which is recorded in
    ``route``.
    """
    if route == "integral" or (route == "auto" and t > SERIES_MAX_T):
        return h_integral(tag, t)
    if route not in ("auto", "series"):
        raise ValueError(f"unknown route {route!r}")
    terms = _series_terms(tag, np.array([t]))[0]
    mags = np.abs(terms)
    s = terms.sum()
    used = int(np.count_nonzero(mags > 1e-16 * max(abs(s), 1e-300)))
    return KernelValue(float(_PREF * t ** -1.5 * s), float(_PREF * t ** -1.5 * mags.sum() * 1e-16), "series",
                       max(used, 1))


def occupation(tag: str, x):
    """Laplace transforms of the kernels: E_b = 1/(eˣ−1), E_f = 1/(eˣ+1), E₀ = 1/(2 sinh x)."""
    x = np.asarray(x, dtype=float)
    if tag == "b":
        return 1.0 / np.expm1(x)
    if tag == "f":
        return 1.0 / (np.exp(x) + 1.0)
    if tag == "0":
        return 0.5 / np.sinh(x)
    raise ValueError(f"unknown kernel {tag!r}")


# -- trace lattices ------------------------------------------------------------


class SupportError(ValueError):
    """The supplied lattice does not cover the quadrature's effective support."""

    def __init__(self, message: str, required: tuple):
        super().__init__(message)
        self.required = required


@dataclass
class TraceLattice:
    """Ψ or Φ on a log-spaced (t, s) lattice, interpolated in log-time.

    ``method`` is passed to RegularGridInterpolator; the default is bilinear.
    """

    tag: str
    t: np.ndarray
    s: np.ndarray
    values: np.ndarray
    method: str = "linear"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.t), len(self.s)):
            raise ValueError("lattice values must have shape (len(t), len(s))")
        if np.any(self.t <= 0) or np.any(self.s <= 0) or np.any(np.diff(self.t) <= 0) or np.any(np.diff(self.s) <= 0):
            raise ValueError("lattice times must be positive and increasing")
        self._interp = RegularGridInterpolator((np.log(self.t), np.log(self.s)), self.values,
                                               method=self.method)

    @classmethod
    def from_function(cls, tag: str, fn: Callable, t_min: float, t_max: float, points: int = 241,
                      method: str = "linear") -> "TraceLattice":
        ts = np.geomspace(t_min, t_max, points)
        return cls(tag, ts, ts.copy(), np.asarray(fn(ts, ts), dtype=float), method)

    def __call__(self, ts, ss) -> np.ndarray:
        lt = np.clip(np.log(ts), math.log(self.t[0]), math.log(self.t[-1]))
        ls = np.clip(np.log(ss), math.log(self.s[0]), math.log(self.s[-1]))
        lt, ls = np.meshgrid(lt, ls, indexing="ij")
        return self._interp(np.stack([lt, ls], axis=-1))

    @property
    def range(self) -> tuple:
        return (max(self.t[0], self.s[0]), min(self.t[-1], self.s[-1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "s", self.tag])
        for a, ta in enumerate(self.t):
            for b, sb in enumerate(self.s):
                w.writerow(["%.17g" % ta, "%.17g" % sb, "%.17g" % self.values[a, b]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TraceLattice":
        rows = list(csv.reader(io.StringIO(text)))
        tag = rows[0][2]
        data = np.array([[float(x) for x in r] for r in rows[1:] if r])
        ts = np.unique(data[:, 0])
        ss = np.unique(data[:, 1])
        vals = np.full((len(ts), len(ss)), np.nan)
        ia = np.searchsorted(ts, data[:, 0])
        ib = np.searchsorted(ss, data[:, 1])
        vals[ia, ib] = data[:, 2]
        if np.isnan(vals).any():
            raise ValueError("trace CSV does not form a full (t, s) lattice")
        return cls(tag, ts, ss, vals)


# -- invariants ----------------------------------------------------------------


@dataclass(frozen=True)
class BogolyubovResult:
    kind: str
    beta: float
    value: float
    error: float
    coarse: float
    t_range: tuple
    nodes: int


T_LOW = 4e-3  # all three kernels are below 1e-18 here


def _simpson_weights(m: int, du: float) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w * du / 3


def _double(kernel_t: str, kernel_s: str, trace, beta: float, t_lo: float, t_hi: float, intervals: int,
            swap: bool) -> float:
    u = np.linspace(math.log(t_lo), math.log(t_hi), intervals + 1)
    t = np.exp(u)
    w = _simpson_weights(intervals, u[1] - u[0]) * t
    kt = h_series(kernel_t, t) * w
    ks = h_series(kernel_s, t) * w
    b2 = beta * beta
    # trace(β²·first, β²·second): B_b uses Ψ(β²s, β²t), B_f uses Φ(β²t, β²s)
    M = np.asarray(trace(b2 * t, b2 * t), dtype=float)
    if swap:
        return float(ks @ M @ kt)
    return float(kt @ M @ ks)


def bogolyubov_invariant(kind: str, trace, beta: float, t_max: Optional[float] = None, intervals: int = 400,
                         tail_tol: float = 1e-12) -> BogolyubovResult:
    """B_b(β) = ∬h_f(s)h_b(t)Ψ(β²s, β²t) or B_f(β) = ∬h₀(s)h₀(t)2β²Φ(β²t, β²s).

    ``trace`` is a :class:`TraceLattice` or a vectorized callable
    ``trace(ts, ss) -> matrix``; a callable needs ``t_max``. The quadrature is
    Simpson in log t on [T_LOW, t_max]/β²; the error is the Richardson
    estimate from halving the step.
    """
    if kind not in ("b", "f"):
        raise ValueError("kind is 'b' or 'f'")
    if beta <= 0:
        raise ValueError("β must be positive")
    b2 = beta * beta
    if isinstance(trace, TraceLattice):
        lo, hi = trace.range
        need_lo = T_LOW * b2
        if lo > need_lo:
            raise SupportError(f"lattice starts at {lo:.3e}; β = {beta} needs {need_lo:.3e}", (need_lo, hi))
        edge = max(np.abs(trace.values[-1]).max(), np.abs(trace.values[:, -1]).max())
        scale = max(np.abs(trace.values).max(), 1e-300)
        if edge > tail_tol * scale:
            # decay rate from the last two diagonal entries
            d = np.abs(np.diag(trace.values))
            rate = -math.log(max(d[-1], 1e-300) / max(d[-2], 1e-300)) / (trace.t[-1] - trace.t[-2])
            extra = math.log(edge / (tail_tol * scale)) / rate if rate > 0 else math.inf
            raise SupportError(f"lattice edge value {edge:.2e} is not negligible; extend the lattice to "
                               f"about {hi + extra:.3e}", (need_lo, hi + extra))
        t_hi = (hi if t_max is None else min(hi, t_max)) / b2
    else:
        if t_max is None:
            raise ValueError("a callable trace needs t_max")
        t_hi = t_max / b2
    t_lo = T_LOW
    if t_hi <= t_lo:
        raise SupportError("upper time limit is below the kernel support", (T_LOW * b2, T_LOW * b2 * 10))
    if kind == "b":
        args = ("b", "f", True)
        factor = 1.0
    else:
        args = ("0", "0", False)
        factor = 2 * b2
    intervals += intervals % 2
    coarse = factor * _double(args[0], args[1], trace, beta, t_lo, t_hi, intervals, args[2])
    fine = factor * _double(args[0], args[1], trace, beta, t_lo, t_hi, 2 * intervals, args[2])
    return BogolyubovResult(kind, float(beta), fine, abs(fine - coarse) / 15, coarse, (t_lo, t_hi), 2 * intervals + 1)


def trace_formula(pair, kind: str, beta: float) -> float:
    """B_b = Tr(E_f₊ − E_f₋)(E_b₊ − E_b₋) or B_f = 2β²Tr(D₊E₀₊ − D₋E₀₋)² from eigendata and overlaps."""
    P2 = pair.P2  # [j (minus), k (plus)]
    if kind == "b":
        wp = np.sqrt(pair.plus.lam)
        wm = np.sqrt(pair.minus.lam)
        if min(wp.min(), wm.min()) <= 0:
            raise ValueError("B_b needs strictly positive operators")
        fp, fm = occupation("f", beta * wp), occupation("f", beta * wm)
        gp, gm = occupation("b", beta * wp), occupation("b", beta * wm)
        return float(fp @ gp + fm @ gm - fm @ P2 @ gp - gm @ P2 @ fp)
    if kind == "f":
        if not pair.is_dirac:
            raise ValueError("B_f needs Dirac decompositions")

        def weight(mu):
            a = beta * np.abs(mu)
            out = np.full_like(mu, 1.0 / (2 * beta))
            nz = a > 1e-12
            out[nz] = mu[nz] * 0.5 / np.sinh(a[nz])
            return out

        fp = weight(pair.plus.eigenvalues)
        fm = weight(pair.minus.eigenvalues)
        return float(2 * beta * beta * (fp @ fp + fm @ fm - 2 * fm @ P2 @ fp))
    raise ValueError("kind is 'b' or 'f'")
