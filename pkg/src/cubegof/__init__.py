"""Non-parametric multivariate goodness-of-fit tests and rate upper limits.

Data proposed to follow a model are transformed onto the unit hypercube,
where uniformity is tested either axis by axis (projections) or through
the coordinate-product volume; limits on an event rate come from
Poisson-averaged test CDFs with exact or Monte-Carlo-calibrated nulls.
"""

from .discovery import (
    DiscoveryResult,
    ProjectionPValues,
    discover,
    min_p_combine,
    prod_p_combine,
    project_pvalues,
    volume_method_pvalue,
)
from .errors import (
    CalibrationError,
    CubegofError,
    LimitError,
    StatisticError,
    TableError,
    TableMissingError,
    TransformError,
)
from .generators import BackgroundSpec, SignalSpec, analysis_model, generate_experiment
from .limits import (
    CorrectionSurface,
    LimitResult,
    PoissonAveragedCurve,
    best_projection_limit,
    calibrate_correction,
    corrected_projection_limit,
    counting_curve,
    pcs_best_projection_limit,
    pcs_sum_projection_limit,
    poisson_averaged_cdf,
    poisson_counting_limit,
    solve_limit,
    univariate_curve,
    volume_curve,
)
from .stats import (
    ks_statistic,
    oi_statistic,
    ordered_sample,
    pcs_statistic,
    slss_statistic,
    spacings,
)
from .store import NullEvaluator, TableStore
from .tables import (
    DensityGrid,
    GaussianAsymptote,
    TabulatedNull,
    convolve_power,
    density_from_null,
    eval_null,
    fit_asymptote,
    tabulate_null,
)
from .transforms import (
    HierarchicalModel,
    MarginalModel,
    ProductModel,
    UnitCubeSample,
    exponential_marginal,
    hierarchical_transform,
    normal_marginal,
    pit_independent,
    product_uniform_cdf,
    tabulated_marginal,
    truncated_normal_marginal,
    uniform_marginal,
    volume_pit,
    volume_transform,
)

__version__ = "0.1.0"
