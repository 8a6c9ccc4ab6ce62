"""Monte Carlo toolkit for an implicit-Euler discretization of a degenerate
p-Laplacian evolution driven by compensated jump noise, with verification
harnesses for its energy estimates and a sample-average optimizer for
initial-value controls."""

from .grid import (
    FREE_BOUNDARY,
    ZERO_BOUNDARY,
    Field,
    Grid,
    GridMismatchError,
    div_flux,
    dual_norm_estimate,
    gradient,
    l1_norm,
    l2_inner,
    l2_norm,
    lp_grad_norm,
    w1p_norm,
)
from .levy import (
    InfiniteMassError,
    LevyModel,
    PrmPath,
    compensated_increment,
    eta_linear,
    eta_sine,
    eta_zero,
    isometry_rhs,
    sample_prm,
)
from .scheme import (
    CLAMP_BOUNDARY,
    LIFT_BOUNDARY,
    FluxModel,
    Interpolants,
    NonConvergence,
    SchemeConfig,
    Trajectory,
    initial_smoothing,
    interpolants,
    linear_flux,
    prepare_initial,
    project_control,
    simulate_path,
    sine_flux,
    step_solve,
    zero_flux,
)
from .estimates import (
    DegenerateRegressionError,
    EnsembleReport,
    IsometryReport,
    ScalingReport,
    UniquenessReport,
    aldous_scaling,
    apriori_check,
    generate_ensemble,
    interp_gap_scaling,
    isometry_check,
    uniqueness_check,
)
from .control import (
    ControlParam,
    CostSpec,
    SAAResult,
    constant_target,
    cost_J,
    psi_l2,
    psi_zero,
    saa_minimize,
    sine_basis,
)

__version__ = "0.1.0"
