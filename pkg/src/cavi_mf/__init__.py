"""Mean-field variational inference by coordinate ascent (CAVI) on log-concave targets."""

from .diagnostics import (
    CertKind,
    Certificate,
    free_energy,
    gap_series,
    mean_field_residual,
    rate_certificate,
)
from .engine import (
    GaussianState,
    NarrowAtPoint,
    RunReport,
    StandardGaussian,
    SweepSchedule,
    cavi_sweep,
    cavi_update_coordinate,
    gaussian_sweep,
    init_gaussian_state,
    init_state,
    parallel_sweep,
    solve,
)
from .marginal import GridMarginal, GridSpec, ProductState, w2_1d, w2_product
from .potentials import Potential, make_pairwise, make_quadratic, make_regression

__version__ = "0.1.0"
