"""skewlab: a numerical laboratory for rigid skew products on the 4-torus.

Core objects: integer-matrix skew products with localized fiber
perturbations, their invariant splittings, stable/unstable holonomies,
line-field transversality search, and empirical-measure experiments.
"""

from .errors import (
    BuildError,
    ConditionError,
    ConfigError,
    NonConvergenceError,
    NotHyperbolicError,
    SkewlabError,
)
from .systems import SkewProductSystem, FiberPerturbation, make_product
from .torus import Direction, IntMatrix2, TorusPoint2, TorusPoint4

__version__ = "0.1.0"

__all__ = [
    "SkewlabError",
    "ConfigError",
    "ConditionError",
    "NotHyperbolicError",
    "BuildError",
    "NonConvergenceError",
    "SkewProductSystem",
    "FiberPerturbation",
    "make_product",
    "TorusPoint2",
    "TorusPoint4",
    "IntMatrix2",
    "Direction",
    "__version__",
]
