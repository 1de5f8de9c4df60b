from loguru import logger

from lqlab.enums import (
    Differencing as Differencing,
    ExperimentKind as ExperimentKind,
    FixedPointForm as FixedPointForm,
    LearningRateSchedule as LearningRateSchedule,
    PolicyEvaluation as PolicyEvaluation,
    Region as Region,
    StepSizeMode as StepSizeMode,
)
from lqlab.errors import (
    ConfigError as ConfigError,
    Diverged as Diverged,
    LqlabError as LqlabError,
    NoPositiveRoot as NoPositiveRoot,
    NotConverged as NotConverged,
    SolverError as SolverError,
)
from lqlab.grid import Grid1D as Grid1D, PolicyField as PolicyField, ValueField as ValueField
from lqlab.hjb import (
    ConvergenceLog as ConvergenceLog,
    HamiltonianResult as HamiltonianResult,
    SchemeConfig as SchemeConfig,
    SolverResult as SolverResult,
    evaluate_policy as evaluate_policy,
    frozen_policy_system as frozen_policy_system,
    hamiltonian_minimize as hamiltonian_minimize,
    hjb_residual as hjb_residual,
    monotone_mesh_bound as monotone_mesh_bound,
    policy_iteration as policy_iteration,
    required_relaxation_rate as required_relaxation_rate,
    value_iteration as value_iteration,
)
from lqlab.linear_fa import (
    FeatureVector as FeatureVector,
    FeatureWeights as FeatureWeights,
    StepSize as StepSize,
    fa_train as fa_train,
    fa_update as fa_update,
    features as features,
    greedy_action as greedy_action,
    step_bound as step_bound,
)
from lqlab.model import (
    DiscreteMdp as DiscreteMdp,
    LqProblem as LqProblem,
    RiccatiSolution as RiccatiSolution,
    analytic_policy as analytic_policy,
    analytic_value as analytic_value,
    mdp_step as mdp_step,
    riccati_solve as riccati_solve,
)
from lqlab.monitor import DivergenceMonitor as DivergenceMonitor
from lqlab.monotone import (
    CoefficientReport as CoefficientReport,
    MonotonicityReport as MonotonicityReport,
    coefficient_check as coefficient_check,
    probe_operator_monotonicity as probe_operator_monotonicity,
    scheme_operator as scheme_operator,
    sup_error as sup_error,
)
from lqlab.qlearning import (
    QLearnConfig as QLearnConfig,
    QTable as QTable,
    greedy_extract as greedy_extract,
    q_update as q_update,
    rollout_return as rollout_return,
    train as train,
)

# silent until the application opts in, see lqlab.log.configure_logging
logger.disable("lqlab")
