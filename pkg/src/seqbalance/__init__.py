"""Balancing-weight estimation for non-monotone missing data on pattern graphs."""

from .basis import BasisConfig, BasisSpec, build_basis, design_matrix, evaluate, penalty_weights
from .data import CompatReport, Dataset, ObservedView, from_arrays, load_csv
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    FitError,
    GraphError,
    SeqbalanceError,
)
from .estimator import (
    EEProblem,
    FitResult,
    bootstrap_covariance,
    compute_influence,
    estimate_u,
    newton_logistic,
    psi,
    psi_dot,
    sandwich_covariance,
    solve_weighted_ee,
    wald_table,
)
from .optim import (
    CvResult,
    LossProblem,
    SolveResult,
    SolverOptions,
    cross_validate,
    kkt_residual,
    lambda_max,
    loss_value_grad,
    minimize,
    prox_l1,
)
from .patterns import (
    Path,
    Pattern,
    PatternGraph,
    ValidationReport,
    build_graph,
    ccmv_graph,
    graph_from_dict,
    graph_to_dict,
    load_graph,
    parse_pattern,
    save_graph,
)
from .pipeline import FitArtifacts, FitSettings, run_fit
from .simulate import (
    SimConfig,
    SimData,
    StudyResult,
    calibrate_odds,
    ccmv_study_graph,
    default_config,
    default_odds,
    default_study_graph,
    generate,
    pruned_study_graph,
    run_study,
    sensitivity_graphs,
    sensitivity_study,
    true_weights,
    truncated_normal,
)
from .weights import (
    OddsModel,
    OddsModels,
    WeightSet,
    assemble_local_weights,
    balance_report,
    combine_q,
    fit_local,
    fit_sequential,
    fit_weights_for_method,
)

__version__ = "0.1.0"
