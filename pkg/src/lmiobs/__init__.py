"""Observer synthesis for Lipschitz nonlinear discrete-time and
sampled-data systems, with certificate re-checking and simulation."""

__version__ = "0.1.0"

from . import expr, kernels  # noqa: F401
