"""Functional a posteriori error bounds on finite Hilbert complexes."""

from .linalg import (
    ConvergenceError,
    GramOperator,
    IterStats,
    SparseOperator,
    cg_solve,
    dense_oracle,
    lanczos_extremal,
    weighted_dot,
)
from .complex_core import (
    CohomologyBasis,
    ConstantsReport,
    HilbertComplex,
    WeightedSpace,
    cohomology_basis,
    helmholtz_decompose,
    poincare_constant,
    project_range,
    verify_complex,
)
from .instances import (
    GridSpec,
    build_cycle,
    build_grid2d,
    build_grid3d,
    build_path,
    manufacture,
)

__version__ = "0.1.0"
