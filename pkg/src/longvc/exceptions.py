"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, data problems exit 3, numeric failures exit 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Input data violate the long-format contract."""


class NumericError(RuntimeError):
    """A numeric procedure failed (singularity, non-convergence, infeasibility)."""
