from .curves import (
    DEFAULT_MIN_COUNT,
    DEFAULT_PHI_EDGES,
    DEFAULT_T_EDGES,
    DEFAULT_X_EDGES,
    ChildCountAccumulator,
    ChildCountHistogram,
    DecayAccumulator,
    DecayCurve,
    DurationAccumulator,
    DurationCurve,
    ImpactAccumulator,
    ImpactCurve,
    ProfileAccumulator,
    ProfileCurve,
    child_count_distribution,
    decay_curve,
    default_z_points,
    duration_ratio,
    execution_profile,
    peak_impact_curve,
)
from .fits import (
    DEFAULT_FIT_RANGE,
    DecayFit,
    FitError,
    SqrtFit,
    beta_from_gamma,
    decay_shape,
    fit_decay_beta,
    fit_sqrt_law,
)
from .powerlaw import REFERENCE_CHILD_COUNT_EXPONENT, PowerLawFit, fit_power_law
from .stats import BinStats, bin_index, log_edges

