"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
ConditionError -> 3, NonConvergenceError -> 4. Everything else is a bug.
"""

from __future__ import annotations


class SkewlabError(Exception):
    """Base class for all package errors."""


class ConfigError(SkewlabError):
    """Bad or inconsistent user input (config file, CLI arguments)."""


class ConditionError(SkewlabError):
    """A mathematical condition required by an operation does not hold."""


class NotHyperbolicError(ConditionError):
    """2x2 integer matrix is not hyperbolic (|trace| <= 2)."""


class BuildError(ConditionError):
    """A constructed system violates its build-time requirements."""


class NonConvergenceError(SkewlabError):
    """An iterative routine hit its depth/iteration cap before its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
