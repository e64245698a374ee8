"""Hard-thresholding sparse optimization toolkit."""

__version__ = "0.1.0"

from .thresholding import (
    NU_MAX,
    BoundSummary,
    SupportSet,
    deviation_bound,
    hard_threshold,
    project_l2_ball,
    project_support,
    rho_for_nu,
    tightness_witness,
    top_k_indices,
    worst_case_ratio,
)
from .objectives import (
    CurvatureEstimate,
    ObjectiveModel,
    RegularizedLeastSquares,
    RegularizedLogistic,
    SensingProblem,
    estimate_restricted_curvature,
    heuristic_step_size,
    restricted_gradient_norm_T,
)
from .analysis import (
    ConvergenceCoefficients,
    beta_case1,
    beta_case2,
    min_update_frequency,
    optimal_nu,
    rip_threshold_cosamp,
    rip_threshold_iht,
    sample_size_rip,
    srh_threshold_grasp,
    svrg_coefficients,
)
from .solvers_batch import SolverConfig, SolverReport, cosamp, grasp, iht, pgd
from .solvers_stochastic import SagaConfig, SagaState, SvrgConfig, ht_saga, ht_svrg

__all__ = [name for name in dir() if not name.startswith("_")]
