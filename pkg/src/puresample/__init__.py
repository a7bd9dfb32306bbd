"""PureSample: neural BRDF models learned from forward random walks on
explicit microgeometry, serving evaluation, importance sampling, and pdf
queries to a path tracer."""

__version__ = "0.1.0"

from .rng import Rng

__all__ = ["Rng", "__version__"]
