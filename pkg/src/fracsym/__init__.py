"""fracsym: discrete rearrangements and fractional-order shape functionals."""

from .grid import (
    FracParams,
    FormatError,
    Grid,
    GridFunction,
    IndicatorSet,
    NonFiniteError,
    ShapeMismatchError,
    load,
    lp_norm,
    measure,
    save,
    to_csv,
)
from .quadrature import QuadratureSpec, TruncationError
from .rearrange import (
    DistributionProfile,
    distribution_function,
    distribution_profile,
    schwarz_function,
    schwarz_set,
    steiner_function,
)

__version__ = "0.1.0"
