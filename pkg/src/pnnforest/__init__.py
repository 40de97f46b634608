"""Potential-nearest-neighbor forest prediction with a Monte Carlo
verification harness.

Layers, bottom up: :mod:`pnnforest.geometry` (rectangle predicates and k-PNN
search), :mod:`pnnforest.process` (seeded marked-Poisson sampling and the
model catalog), :mod:`pnnforest.forest` (non-adaptive weighted prediction),
:mod:`pnnforest.stabilization` (regions, membership probabilities, decay
functionals, assumption audits), :mod:`pnnforest.mc` (replication engine and
estimators), :mod:`pnnforest.cli` (experiment runner).
"""

from .geometry import (
    HyperRect,
    PointConfig,
    as_point,
    count_in_rect_excl,
    is_kpnn,
    kpnn_set,
    kpnn_set_fast,
    rect_between,
    rect_volume,
)
from .process import (
    DensitySpec,
    MarkedSample,
    ModelSpec,
    NoiseSpec,
    QuadratureError,
    RegressionSpec,
    SeedSpec,
    rect_mass,
    sample_marked,
    sample_poisson_config,
)
from .forest import Prediction, WeightScheme, predict_multi, predict_uniform, predict_weighted
from .stabilization import (
    AssumptionReport,
    CFunctionResult,
    StabilizationRegion,
    c_function,
    check_assumptions,
    membership_prob,
    poisson_cdf_psi,
    region_of,
    tail_bound,
)
from .mc import (
    ReplicationPlan,
    ReplicationResult,
    StandardizationError,
    SummaryReport,
    concentration_check,
    ecdf_kolmogorov,
    estimate_L_moments,
    estimate_bias,
    lower_bound_exponent_fit,
    multivariate_rect_kolmogorov,
    run_replications,
    standardize,
    summarize_replications,
    variance_floor_check,
)

__version__ = "0.1.0"
