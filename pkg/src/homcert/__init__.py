"""homcert: joint state-action abstractions of history-based decision
processes, surrogate MDP construction, policy uplifting, and numerical
certification of the associated performance-loss bounds on exact
desk-scale instances."""

from .abstraction import (
    GapReport,
    HomomorphismMap,
    gap_report,
    identity_map,
    induce_policy,
    induce_process,
    representative_policy,
)
from .certify import (
    CERTIFICATE_KINDS,
    BoundCertificate,
    CertificationContext,
    UpliftedPolicy,
    certify,
    evaluate_uplift,
    uplift_policy,
)
from .dists import Categorical
from .history import (
    Alphabets,
    CapExceededError,
    DiscountConfig,
    EMPTY_HISTORY,
    History,
    HistoryPolicy,
    OriginalProcess,
    ValueInterval,
    context_universe,
    enumerate_histories,
    optimal_q,
    policy_values,
    q_value,
    step_distribution,
    v_value,
)
from .solver import (
    AbstractPolicy,
    SolveResult,
    policy_evaluation,
    solve_regional_system,
    value_iteration,
)
from .surrogate import (
    StochasticInverse,
    SurrogateMdp,
    b_average_q,
    build_inverse,
    epsilon_b,
    induced_action_measure,
    surrogate_mdp,
)

__version__ = "0.1.0"

__all__ = [
    "Alphabets",
    "AbstractPolicy",
    "BoundCertificate",
    "CapExceededError",
    "Categorical",
    "CertificationContext",
    "CERTIFICATE_KINDS",
    "DiscountConfig",
    "EMPTY_HISTORY",
    "GapReport",
    "History",
    "HistoryPolicy",
    "HomomorphismMap",
    "OriginalProcess",
    "SolveResult",
    "StochasticInverse",
    "SurrogateMdp",
    "UpliftedPolicy",
    "ValueInterval",
    "b_average_q",
    "build_inverse",
    "certify",
    "context_universe",
    "enumerate_histories",
    "epsilon_b",
    "evaluate_uplift",
    "gap_report",
    "identity_map",
    "induce_policy",
    "induce_process",
    "induced_action_measure",
    "optimal_q",
    "policy_evaluation",
    "policy_values",
    "q_value",
    "representative_policy",
    "solve_regional_system",
    "step_distribution",
    "surrogate_mdp",
    "uplift_policy",
    "v_value",
    "value_iteration",
]
