"""Model operator pairs used by the test suites and the ``verify`` command."""

from __future__ import annotations

import math

import numpy as np

from .tensor_core import PAULI, ModelManifold, OperatorGeometry

__all__ = [
    "circle",
    "laplace_1d",
    "dirac_1d",
    "unit_circle_pair",
    "unit_circle_dirac_pair",
    "shifted_pair",
    "shifted_dirac_pair",
    "two_scale_pair",
    "variable_metric_pair",
    "two_scale_dirac_pair",
    "FIXTURES",
]

TWO_PI = 2 * math.pi


def circle(grid: int = 256) -> ModelManifold:
    return ModelManifold.circle(TWO_PI, grid)


def laplace_1d(man: ModelManifold, c=1.0, q=0.0, a=0.0, label="") -> OperatorGeometry:
    """−c^{1/4}(∂+ia)c^{1/2}(∂+ia)c^{1/4} + q on a scalar fiber; ``c`` may be a callable of x."""
    x = man.coords[:, 0]
    cval = c(x) if callable(c) else c
    return OperatorGeometry.laplace(man, cval, connection=[[1j * a]], potential=q, label=label)


def dirac_1d(man: ModelManifold, c=1.0, s=0.0, a=0.0, m=0.0, label="") -> OperatorGeometry:
    """iσ₁ c^{1/4}(∂+ia)c^{1/4} + sσ₂ + mσ₃."""
    x = man.coords[:, 0]
    cval = c(x) if callable(c) else np.full(man.npts, float(c))
    frame = np.sqrt(np.asarray(cval, dtype=float)).reshape(-1, 1, 1)
    S = s * PAULI["y"] + m * PAULI["z"]
    A = 1j * a * np.eye(2)
    return OperatorGeometry.from_dirac(man, PAULI["x"][None], frame, S, connection=A[None], label=label)


def unit_circle_pair(grid: int = 256, q: float = 1.0):
    """Two copies of −∂² + q on the circle of circumference 2π."""
    man = circle(grid)
    L = laplace_1d(man, q=q, label="unit")
    return L, L


def unit_circle_dirac_pair(grid: int = 128, s: float = 0.8):
    man = circle(grid)
    D = dirac_1d(man, s=s, label="unit-dirac")
    return D, D


def shifted_pair(grid: int = 256, m: float = 0.7, mu2: float = 1.0):
    """L₋ = −∂² + μ², L₊ = L₋ + m²."""
    man = circle(grid)
    minus = laplace_1d(man, q=mu2, label="shift-")
    return minus.shifted(m * m), minus


def shifted_dirac_pair(grid: int = 128, m: float = 0.7, s: float = 0.8):
    """D₋ = iσ₁∂ + sσ₂, D₊ = D₋ + mσ₃."""
    man = circle(grid)
    return dirac_1d(man, s=s, m=m, label="shiftD+"), dirac_1d(man, s=s, label="shiftD-")


def two_scale_pair(grid: int = 256, c=(1.0, 4.0), q=(0.3, 0.8), a=(0.2, -0.35)):
    """Distinct constant metrics, potentials and U(1) twists."""
    man = circle(grid)
    return (laplace_1d(man, c[0], q[0], a[0], "two-scale+"), laplace_1d(man, c[1], q[1], a[1], "two-scale-"))


def variable_metric_pair(grid: int = 512, amp: float = 0.3, c_minus: float = 1.0, q=(0.3, 0.8), a=(0.2, -0.35)):
    """g₊^{11} = 1 + amp·cos x against a constant metric."""
    man = circle(grid)
    plus = laplace_1d(man, lambda x: 1.0 + amp * np.cos(x), q[0], a[0], "variable+")
    minus = laplace_1d(man, c_minus, q[1], a[1], "variable-")
    return plus, minus


def two_scale_dirac_pair(grid: int = 256, c=(1.0, 4.0), s=(0.5, 0.9), a=(0.2, -0.35)):
    """γ± = √c± σ₁, S± = s± σ₂ with U(1) twists."""
    man = circle(grid)
    return (dirac_1d(man, c[0], s[0], a[0], label="two-scaleD+"), dirac_1d(man, c[1], s[1], a[1], label="two-scaleD-"))


FIXTURES = {
    "unit-circle": unit_circle_pair,
    "unit-circle-dirac": unit_circle_dirac_pair,
    "shifted": shifted_pair,
    "shifted-dirac": shifted_dirac_pair,
    "two-scale": two_scale_pair,
    "variable-metric": variable_metric_pair,
    "two-scale-dirac": two_scale_dirac_pair,
}
