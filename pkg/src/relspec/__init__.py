"""Relative spectral invariants of operator pairs.

Components
----------
tensor_core      combined (t,s) geometry of an operator pair
coeff_engine     closed-form heat-trace coefficients
spectral_engine  operator assembly, eigendecomposition, spectral traces
laplace_asym     Laplace-method asymptotics and Gaussian calculus
synge_lab        world-function laboratory
bogolyubov       thermal kernels and Bogolyubov invariants
fit_harness      small-epsilon regression of spectral traces
cli              batch command line
"""

__version__ = "0.1.0"

__all__ = [
    "tensor_core",
    "coeff_engine",
    "spectral_engine",
    "laplace_asym",
    "synge_lab",
    "bogolyubov",
    "fit_harness",
    "fixtures",
    "cli",
]
