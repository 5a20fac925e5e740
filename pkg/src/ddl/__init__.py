"""Diffusion-based distributed dictionary learning.

A set of simulated sensor nodes each hold a disjoint block of observations.
Every node alternates sparse coding (iterated soft thresholding) with a
dictionary gradient step, then averages its intermediate dictionary with
its neighbours' (Adapt-Then-Combine). No fusion centre is involved.
"""

from ddl.exceptions import (
    ConvergenceError,
    DDLError,
    DivergenceError,
    ShapeError,
    SingularGramError,
    StepSizeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DDLError",
    "DivergenceError",
    "ShapeError",
    "SingularGramError",
    "StepSizeError",
    "__version__",
]
