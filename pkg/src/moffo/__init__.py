"""Multilevel objective-function-free trust-region optimization toolkit."""

from .hierarchy import (
    CoherentModel,
    Level,
    LevelHierarchy,
    NumericalError,
    TransferOperator,
    build_coherent_model,
    coherence_defect_ok,
    interior_interpolation_1d,
    linear_interpolation_1d,
    operator_norm,
    restriction_of,
    sigma_min,
)
from .weights import (
    ADAGRAD_LIKE,
    MAXGI,
    WeightState,
    init_lower_adagrad,
    init_lower_divergent,
    seed_lower_state,
)
from .step import HessianModel, TrustRegion, cauchy_step, compute_radius, linear_step, taylor_step
from .solver import (
    CostLedger,
    IterationRecord,
    SolveResult,
    SolverConfig,
    Trace,
    cycle_shape,
    monitor_new_cond,
    should_recurse,
    solve,
)
from .bounds import (
    RateReport,
    TheoryConstants,
    beta_recursion,
    check_adagrad_rate,
    check_divergent_rate,
    divergent_thresholds,
    estimate_lipschitz,
    kappa_star,
    lambert_bound_check,
    lambert_w_minus1,
    theory_constants,
)
from .problems import (
    ProblemHierarchy,
    ResNetSpec,
    build_depth_prolongation,
    build_problem,
    finite_difference_check,
    laplacian_quadratic_1d,
    list_problems,
    nonconvex_chain_1d,
    quadratic_diag,
    resnet_regression,
    with_gaussian_noise,
    with_minibatch,
)

__version__ = "0.1.0"
