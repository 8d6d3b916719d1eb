"""Cross-fitted debiased offline policy learning along natural policy gradient flows."""
from .core_model import (
    DegenerateSplitError,
    LinearSoftmax,
    LoggedDataset,
    LoggedInteraction,
    OverlapError,
    SplitTriple,
    TabularSoftmax,
    action_probabilities,
    read_jsonl,
    score_features,
    split_dataset,
    write_jsonl,
)
from .diagnostics import TheoremOneReport, compute_terms, hard_soft_gap_check, reports_to_csv, run_campaign
from .envs import (
    BehaviorSpec,
    SyntheticEnv,
    exact_regret,
    fixture_a,
    oracle_in_class,
    random_env,
    sample_logged_dataset,
    soft_optimal_policy_nonparametric,
    soft_optimal_value,
)
from .flow import FlowConfig, FlowPath, IndexSelection, integrate_flow, select_index
from .learner import DebiasedResult, ERMConfig, LearnerConfig, baseline_erm_full, debiased_policy_learning, fit_erm
from .natural_gradient import (
    GradientSolve,
    advantage_function,
    assemble_fisher,
    assemble_linear_term,
    natural_gradient,
    population_natural_gradient,
    solve_natural_gradient,
)
from .objective import (
    EntropyEstimator,
    SoftValueConfig,
    empirical_soft_value,
    entropy_of_policy_at_context,
    population_soft_value,
)

__version__ = "0.1.0"
