"""longvc: screening, structure identification and efficient estimation for
ultra-high dimensional longitudinal varying-coefficient models."""

__version__ = "0.1.0"

from .bspline import BSplineBasis, CenteredBasis, basis_integrals, decompose, eval_basis, make_basis
from .data import (
    LongitudinalDataset,
    SampledFunction,
    empirical_inner,
    empirical_norm_sq,
    load_long_csv,
    write_long_csv,
)
from .exceptions import ConfigError, DataError, NumericError

__all__ = [
    "__version__",
    "BSplineBasis",
    "CenteredBasis",
    "ConfigError",
    "DataError",
    "LongitudinalDataset",
    "NumericError",
    "SampledFunction",
    "basis_integrals",
    "decompose",
    "empirical_inner",
    "empirical_norm_sq",
    "eval_basis",
    "load_long_csv",
    "make_basis",
    "write_long_csv",
]
