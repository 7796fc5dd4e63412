"""Uplift abstract policies and certify performance-loss bounds numerically.

Each certificate measures, on a concrete finite instance, both the
hypothesis quantities of one bound (the uniformity / representation errors)
and the quantities the bound constrains, then checks ``lhs <= rhs + slack``
where the slack accounts for value-truncation and floating-point error.
Hypotheses are measured, never assumed: feeding an instance that violates a
bound's hypothesis simply yields the measured numbers (and possibly a
failing certificate), not an error.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Mapping, Optional, Sequence

from .abstraction import (
    Classes,
    GapReport,
    HomomorphismMap,
    InducedPolicy,
    gap_report,
    induce_policy,
    induce_process,
    measure_epsilon_mdp,
    partition_classes,
    representative_history,
)
from .dists import Categorical
from .history import (
    Action,
    DiscountConfig,
    History,
    HistoryPolicy,
    OriginalProcess,
    PolicyValues,
    ProcessError,
    QTable,
    VTable,
    optimal_q,
    policy_values,
)
from .solver import AbstractPolicy, SolveResult, policy_evaluation, value_iteration
from .surrogate import (
    ClassJoint,
    StochasticInverse,
    SurrogateMdp,
    b_average_q,
    build_inverse,
    class_joint,
    epsilon_b,
    surrogate_mdp,
)

NUMERICAL_SLACK = 1e-9

CERTIFICATE_KINDS = (
    "T1_mdp_pi",
    "T2_mdp_exact",
    "T3_mdp_star",
    "T4_q_pi",
    "T5_q_star",
    "T6_v_pi",
    "T7_v_star",
    "L_qbq",
    "L_subopt_action",
)


class UpliftInfeasibleError(RuntimeError):
    """No original action realizes the abstract choice at some history."""


@dataclass(frozen=True)
class UpliftedPolicy:
    """Deterministic history policy realizing an abstract policy.

    At each history it plays the lowest-ordered original action mapped onto
    the abstract state's chosen abstract action.
    """

    psi: HomomorphismMap
    abstract: AbstractPolicy
    policy: HistoryPolicy


def uplift_policy(
    pi: AbstractPolicy,
    psi: HomomorphismMap,
    actions: Sequence[Action],
) -> UpliftedPolicy:
    if not pi.deterministic:
        raise ProcessError("only deterministic abstract policies can be uplifted")

    def choose(h: History) -> Action:
        s = psi.state_of(h)
        try:
            b = pi.action(s)
        except KeyError:
            raise UpliftInfeasibleError(
                f"abstract policy undefined at state {s!r}") from None
        for a in actions:
            if psi.action_of(h, a) == b:
                return a
        raise UpliftInfeasibleError(
            f"no original action at history {h!r} realizes ({s!r}, {b!r})")

    policy = HistoryPolicy.deterministic(
        choose, memory_bound=psi.memory_bound, name="uplift")
    return UpliftedPolicy(psi=psi, abstract=pi, policy=policy)


def evaluate_uplift(
    process: OriginalProcess,
    uplifted: UpliftedPolicy,
    cfg: DiscountConfig,
    histories: Sequence,
) -> PolicyValues:
    """Truncated values of the uplifted policy on the original process."""
    return policy_values(process, uplifted.policy, cfg, histories)


def uplift_distribution(
    pi: AbstractPolicy,
    psi: HomomorphismMap,
    h: History,
    actions: Sequence[Action],
) -> Categorical:
    """Spread an abstract policy's mass uniformly over pre-image actions."""
    s = psi.state_of(h)
    weights: list[tuple[Action, float]] = []
    for b, pb in pi.probabilities(s).items():
        members = [a for a in actions if psi.action_of(h, a) == b]
        if not members:
            raise UpliftInfeasibleError(
                f"no original action at history {h!r} realizes ({s!r}, {b!r})")
        weights.extend((a, pb / len(members)) for a in members)
    return Categorical.from_weights(weights)


@dataclass(frozen=True)
class BoundClause:
    name: str
    lhs: float
    rhs: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "lhs", float(self.lhs))
        object.__setattr__(self, "rhs", float(self.rhs))

    def margin(self) -> float:
        return self.lhs - self.rhs


@dataclass(frozen=True)
class BoundCertificate:
    """One measured bound instance: clauses, inputs, slack, verdict."""

    kind: str
    clauses: tuple[BoundClause, ...]
    inputs: Mapping[str, float]
    slack: float
    passed: bool

    @property
    def lhs(self) -> float:
        return self._binding.lhs

    @property
    def rhs(self) -> float:
        return self._binding.rhs

    @property
    def _binding(self) -> BoundClause:
        return max(self.clauses, key=lambda c: c.margin())

    def as_records(self) -> list[dict]:
        return [
            {
                "kind": self.kind,
                "clause": c.name,
                "lhs": c.lhs,
                "rhs": c.rhs,
                "slack": self.slack,
                "pass": c.lhs <= c.rhs + self.slack,
            }
            for c in self.clauses
        ]

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pass": self.passed,
            "slack": self.slack,
            "inputs": dict(self.inputs),
            "clauses": self.as_records(),
        }


def _finish(kind: str, clauses: Sequence[BoundClause], inputs: dict, slack: float) -> BoundCertificate:
    passed = all(c.lhs <= c.rhs + slack for c in clauses)
    inputs = {k: (float(v) if isinstance(v, (int, float)) or hasattr(v, "item")
                  else v) for k, v in inputs.items()}
    return BoundCertificate(kind=kind, clauses=tuple(clauses), inputs=inputs,
                            slack=float(slack), passed=bool(passed))


def slack_sensitivity(kind: str, gamma: float) -> float:
    """Worst-case sensitivity of a bound check to value-truncation error.

    Interval midpoints sit within half a tail width of the true values, and
    measured epsilon quantities (differences of midpoints) within one tail
    width; the factors below propagate those perturbations through each
    bound's lhs and rhs.
    """
    g = 1.0 / (1.0 - gamma)
    table: dict[str, float] = {
        "T1_mdp_pi": 0.5 + g,
        "T2_mdp_exact": 1.0,
        "T3_mdp_star": 1.0,
        "T4_q_pi": 1.5 + 2.0 * g,
        "T5_q_star": 1.0 + 4.0 * g * g,
        "T6_v_pi": 0.5 + 2.0 * g,
        "T7_v_star": 1.0 + 6.0 * g * g,
        "L_qbq": 1.0,
        "L_subopt_action": 1.0 + g,
    }
    try:
        return table[kind]
    except KeyError:
        raise ProcessError(f"unknown certificate kind {kind!r}") from None


def certificate_slack(kind: str, cfg: DiscountConfig) -> float:
    return cfg.tail * slack_sensitivity(kind, cfg.gamma) + NUMERICAL_SLACK


@dataclass
class CertificationContext:
    """Shared, lazily-computed inputs for a batch of certificates.

    ``universe`` is the enumerated (history, reach weight) list over which
    all suprema and class weights are taken; its weights must correspond to
    ``behavior`` (uniform by default).  ``policy`` is the history policy for
    the on-policy bound kinds; optimal-policy kinds derive everything from
    the process itself.
    """

    process: OriginalProcess
    psi: HomomorphismMap
    cfg: DiscountConfig
    universe: Sequence[tuple[History, float]]
    policy: Optional[HistoryPolicy] = None
    inverse_mode: str = "uniform"
    behavior: Optional[HistoryPolicy] = None
    solver_tol: float = 1e-10
    optimal_values: Optional[Any] = None  # inject to share across contexts

    def __post_init__(self) -> None:
        if self.behavior is None:
            self.behavior = HistoryPolicy.uniform(self.process.alphabets)

    @property
    def actions(self) -> tuple[Action, ...]:
        return self.process.alphabets.actions

    @cached_property
    def histories(self) -> list[History]:
        return [h for h, _ in self.universe]

    @cached_property
    def classes(self) -> Classes:
        return partition_classes(self.psi, self.histories, self.actions)

    @cached_property
    def induced(self):
        return induce_process(self.process, self.psi)

    @cached_property
    def inverse(self) -> StochasticInverse:
        return build_inverse(self.psi, list(self.universe), self.inverse_mode,
                             actions=self.actions, behavior=self.behavior)

    @cached_property
    def surrogate(self) -> SurrogateMdp:
        return surrogate_mdp(self.induced, self.inverse)

    @cached_property
    def joint(self) -> ClassJoint:
        return class_joint(self.psi, list(self.universe), self.inverse,
                           self.behavior, actions=self.actions)

    @cached_property
    def optimal(self):
        if self.optimal_values is not None:
            return self.optimal_values
        return optimal_q(self.process, self.cfg, self.histories)

    @cached_property
    def star(self) -> SolveResult:
        return value_iteration(self.surrogate, self.cfg, self.solver_tol)

    @cached_property
    def policy_vals(self) -> PolicyValues:
        if self.policy is None:
            raise ProcessError("this certificate kind needs an explicit policy")
        return policy_values(self.process, self.policy, self.cfg, self.histories)

    @cached_property
    def induced_policy(self) -> InducedPolicy:
        if self.policy is None:
            raise ProcessError("this certificate kind needs an explicit policy")
        return induce_policy(self.policy, self.psi)

    @cached_property
    def rep_policy(self) -> AbstractPolicy:
        """Representative abstract policy: each state inherits the induced
        policy of its designated member history."""
        rules = {}
        alphabets = self.process.alphabets
        for s, members in self.classes.by_state.items():
            rep = representative_history(self.psi, s, members, alphabets)
            rules[s] = self.induced_policy.probabilities(rep)
        return AbstractPolicy(rules)

    @cached_property
    def rep_eval(self) -> SolveResult:
        return policy_evaluation(self.surrogate, self.rep_policy, self.cfg,
                                 self.solver_tol)

    @cached_property
    def uplifted(self) -> UpliftedPolicy:
        return uplift_policy(self.star.policy, self.psi, self.actions)

    @cached_property
    def uplift_vals(self) -> PolicyValues:
        return evaluate_uplift(self.process, self.uplifted, self.cfg, self.histories)

    @cached_property
    def gaps(self) -> GapReport:
        """Gap report for the explicit policy when given, else the greedy one."""
        policy = self.policy if self.policy is not None else self.optimal.policy
        qtable = self.policy_vals.q if self.policy is not None else self.optimal.q
        return gap_report(self.process, policy, self.psi, qtable, self.cfg,
                          self.histories)

    # measured suprema -----------------------------------------------------

    def sup_q_vs_abstract(self, qtable: QTable, q_abs: Mapping) -> float:
        worst = 0.0
        for (s, b), members in self.classes.pairs.items():
            qa = q_abs[(s, b)]
            for h, a in members:
                worst = max(worst, abs(qtable.mid(h, a) - qa))
        return worst

    def sup_v_vs_abstract(self, vtable: VTable, v_abs: Mapping) -> float:
        worst = 0.0
        for h in self.histories:
            worst = max(worst, abs(vtable.mid(h) - v_abs[self.psi.state_of(h)]))
        return worst

    def pairwise_q_epsilon(self, qtable: QTable) -> float:
        worst = 0.0
        for members in self.classes.pairs.values():
            vals = [qtable.mid(h, a) for h, a in members]
            worst = max(worst, max(vals) - min(vals))
        return worst

    def pairwise_v_epsilon(self, vtable: VTable) -> float:
        worst = 0.0
        for members in self.classes.by_state.values():
            vals = [vtable.mid(h) for h in members]
            worst = max(worst, max(vals) - min(vals))
        return worst

    def policy_similarity(self) -> float:
        """Largest within-state L1 gap between members' original-action rows."""
        if self.policy is None:
            raise ProcessError("policy similarity needs an explicit policy")
        worst = 0.0
        for members in self.classes.by_state.values():
            rows = [self.policy.probabilities(h) for h in members]
            for i in range(len(rows) - 1):
                for other in rows[i + 1:]:
                    worst = max(worst, rows[i].l1_distance(other))
        return worst

    def b_supported_histories(self) -> list[History]:
        return [h for h in self.histories if self.joint.history_mass.get(h, 0.0) > 0.0]

    def b_average_table(self, qtable: QTable) -> dict:
        return {key: b_average_q(qtable, self.inverse, *key)
                for key in self.classes.pairs}


CertifyFn = Callable[[CertificationContext], BoundCertificate]


def _certify_t1(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    gaps = ctx.gaps
    eps_max = gaps.epsilon_max
    sol = ctx.rep_eval
    clauses = [
        BoundClause("action_value",
                    ctx.sup_q_vs_abstract(ctx.policy_vals.q, sol.q),
                    gamma * eps_max / (1.0 - gamma)),
        BoundClause("value",
                    ctx.sup_v_vs_abstract(ctx.policy_vals.v, sol.v),
                    eps_max / (1.0 - gamma)),
    ]
    inputs = {"gamma": gamma, "epsilon_max": eps_max,
              "hypothesis_epsilon_mdp": gaps.epsilon_mdp}
    return _finish("T1_mdp_pi", clauses, inputs, certificate_slack("T1_mdp_pi", ctx.cfg))


def _certify_t2(ctx: CertificationContext) -> BoundCertificate:
    sol = ctx.rep_eval
    clauses = [
        BoundClause("action_value",
                    ctx.sup_q_vs_abstract(ctx.policy_vals.q, sol.q), 0.0),
        BoundClause("value",
                    ctx.sup_v_vs_abstract(ctx.policy_vals.v, sol.v), 0.0),
    ]
    inputs = {
        "gamma": ctx.cfg.gamma,
        "hypothesis_epsilon_mdp": ctx.gaps.epsilon_mdp,
        "hypothesis_policy_similarity": ctx.policy_similarity(),
    }
    return _finish("T2_mdp_exact", clauses, inputs,
                   certificate_slack("T2_mdp_exact", ctx.cfg))


def _certify_t3(ctx: CertificationContext) -> BoundCertificate:
    star = ctx.star
    opt = ctx.optimal
    uplift_v = ctx.uplift_vals.v
    clauses = [
        BoundClause("action_value",
                    ctx.sup_q_vs_abstract(opt.q, star.q), 0.0),
        BoundClause("value",
                    ctx.sup_v_vs_abstract(opt.v, star.v), 0.0),
        BoundClause("uplift",
                    max(abs(opt.v.mid(h) - uplift_v.mid(h)) for h in ctx.histories),
                    0.0),
    ]
    eps_mdp = measure_epsilon_mdp(ctx.induced, ctx.classes)
    inputs = {"gamma": ctx.cfg.gamma, "hypothesis_epsilon_mdp": eps_mdp}
    return _finish("T3_mdp_star", clauses, inputs,
                   certificate_slack("T3_mdp_star", ctx.cfg))


def _certify_t4(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    eps = ctx.pairwise_q_epsilon(ctx.policy_vals.q)
    eps_pi = ctx.gaps.epsilon_pi_rep
    sol = ctx.rep_eval
    # per-state bounds; report the binding state for each clause
    q_best = v_best = None
    for s, members in ctx.classes.by_state.items():
        eps_s = 2.0 * eps + eps_pi[s] / (1.0 - gamma)
        rhs_q = eps + gamma * eps_s / (1.0 - gamma)
        rhs_v = eps_s / (1.0 - gamma)
        lhs_q = 0.0
        for b in ctx.psi.abstract_actions:
            for h, a in ctx.classes.class_of(s, b):
                lhs_q = max(lhs_q, abs(ctx.policy_vals.q.mid(h, a) - sol.q[(s, b)]))
        lhs_v = max(abs(ctx.policy_vals.v.mid(h) - sol.v[s]) for h in members)
        if q_best is None or lhs_q - rhs_q > q_best.margin():
            q_best = BoundClause("action_value", lhs_q, rhs_q)
        if v_best is None or lhs_v - rhs_v > v_best.margin():
            v_best = BoundClause("value", lhs_v, rhs_v)
    inputs = {"gamma": gamma, "epsilon": eps,
              "epsilon_pi_max": max(eps_pi.values())}
    return _finish("T4_q_pi", [q_best, v_best], inputs,
                   certificate_slack("T4_q_pi", ctx.cfg))


def _certify_t5(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    opt = ctx.optimal
    eps = ctx.pairwise_q_epsilon(opt.q)
    star = ctx.star
    uplift_v = ctx.uplift_vals.v
    bound_i = 2.0 * eps / (1.0 - gamma)
    bound_ii = 4.0 * eps / (1.0 - gamma) ** 2
    loss = [opt.v.mid(h) - uplift_v.mid(h) for h in ctx.histories]
    clauses = [
        BoundClause("action_value", ctx.sup_q_vs_abstract(opt.q, star.q), bound_i),
        BoundClause("value", ctx.sup_v_vs_abstract(opt.v, star.v), bound_i),
        BoundClause("uplift_loss", max(loss), bound_ii),
        BoundClause("uplift_optimality", -min(loss), 0.0),
    ]
    inputs = {"gamma": gamma, "epsilon": eps, "inverse_mode": ctx.inverse_mode}
    return _finish("T5_q_star", clauses, inputs,
                   certificate_slack("T5_q_star", ctx.cfg))


def _certify_t6(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    vals = ctx.policy_vals
    eps = ctx.pairwise_v_epsilon(vals.v)
    eps_b = epsilon_b(vals.q, vals.v, ctx.joint, ctx.rep_policy, ctx.psi,
                      ctx.b_supported_histories(), actions=ctx.actions)
    sol = ctx.rep_eval
    avg = ctx.b_average_table(vals.q)
    lhs_q = max(abs(avg[key] - sol.q[key]) for key in avg)
    clauses = [
        BoundClause("b_average", lhs_q, gamma * (eps + eps_b) / (1.0 - gamma)),
        BoundClause("value", ctx.sup_v_vs_abstract(vals.v, sol.v),
                    (eps + eps_b) / (1.0 - gamma)),
    ]
    inputs = {"gamma": gamma, "epsilon": eps, "epsilon_b": eps_b}
    return _finish("T6_v_pi", clauses, inputs, certificate_slack("T6_v_pi", ctx.cfg))


def _certify_t7(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    opt = ctx.optimal
    eps = ctx.pairwise_v_epsilon(opt.v)
    star = ctx.star
    eps_b = epsilon_b(opt.q, opt.v, ctx.joint, star.policy, ctx.psi,
                      ctx.b_supported_histories(), actions=ctx.actions)
    avg = ctx.b_average_table(opt.q)
    lhs_q = max(abs(avg[key] - star.q[key]) for key in avg)
    denom = (1.0 - gamma) ** 2
    clauses = [
        BoundClause("b_average", lhs_q, 3.0 * gamma * (eps + eps_b) / denom),
        BoundClause("value", ctx.sup_v_vs_abstract(opt.v, star.v),
                    3.0 * (eps + eps_b) / denom),
    ]
    slack = certificate_slack("T7_v_star", ctx.cfg)
    inputs = {"gamma": gamma, "epsilon": eps, "epsilon_b": eps_b}
    if eps + eps_b <= slack:
        # exact case: every member history's optimal action must land on the
        # abstract optimal action (violations counted, so slack < 1 is safe)
        violations = 0
        for h in ctx.histories:
            s = ctx.psi.state_of(h)
            a_star = ctx.optimal.policy.probabilities(h).support()[0]
            if ctx.psi.pair(h, a_star) != (s, star.policy.action(s)):
                violations += 1
        clauses.append(BoundClause("optimal_action_identity", float(violations), 0.0))
        inputs["exact_case"] = 1.0
    return _finish("T7_v_star", clauses, inputs, slack)


def _certify_l_qbq(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    vals = ctx.policy_vals
    sol = ctx.rep_eval
    eps = ctx.sup_v_vs_abstract(vals.v, sol.v)
    avg = ctx.b_average_table(vals.q)
    lhs = max(abs(avg[key] - sol.q[key]) for key in avg)
    clauses = [BoundClause("b_average", lhs, gamma * eps)]
    inputs = {"gamma": gamma, "epsilon": eps}
    return _finish("L_qbq", clauses, inputs, certificate_slack("L_qbq", ctx.cfg))


def _certify_l_subopt(ctx: CertificationContext) -> BoundCertificate:
    gamma = ctx.cfg.gamma
    opt = ctx.optimal
    # the action-gap hypothesis is about a deterministic policy; fall back to
    # the uplifted one when the context policy is stochastic
    eval_policy = ctx.uplifted.policy
    if ctx.policy is not None and all(
            len(ctx.policy.probabilities(h)) == 1 for h in ctx.histories):
        eval_policy = ctx.policy
    vals = policy_values(ctx.process, eval_policy, ctx.cfg, ctx.histories)
    eps = 0.0
    for h in ctx.histories:
        eps = max(eps, opt.v.mid(h) - opt.q.mid(h, eval_policy.probabilities(h).support()[0]))
    v_loss = [opt.v.mid(h) - vals.v.mid(h) for h in ctx.histories]
    q_loss = [opt.q.mid(h, a) - vals.q.mid(h, a)
              for h in ctx.histories for a in ctx.actions]
    clauses = [
        BoundClause("value_loss", max(v_loss), eps / (1.0 - gamma)),
        BoundClause("action_value_loss", max(q_loss), gamma * eps / (1.0 - gamma)),
        BoundClause("value_dominance", -min(v_loss), 0.0),
        BoundClause("action_value_dominance", -min(q_loss), 0.0),
    ]
    inputs = {"gamma": gamma, "epsilon": eps}
    return _finish("L_subopt_action", clauses, inputs,
                   certificate_slack("L_subopt_action", ctx.cfg))


_DISPATCH: dict[str, CertifyFn] = {
    "T1_mdp_pi": _certify_t1,
    "T2_mdp_exact": _certify_t2,
    "T3_mdp_star": _certify_t3,
    "T4_q_pi": _certify_t4,
    "T5_q_star": _certify_t5,
    "T6_v_pi": _certify_t6,
    "T7_v_star": _certify_t7,
    "L_qbq": _certify_l_qbq,
    "L_subopt_action": _certify_l_subopt,
}


def certify(kind: str, ctx: CertificationContext) -> BoundCertificate:
    """Measure and check one bound kind on the context's instance."""
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ProcessError(
            f"unknown certificate kind {kind!r}; expected one of {CERTIFICATE_KINDS}"
        ) from None
    return fn(ctx)


def mdp_action_gap_certificate(
    mdp: SurrogateMdp,
    policy: AbstractPolicy,
    cfg: DiscountConfig,
    tol: float = 1e-12,
) -> BoundCertificate:
    """One-step action-gap bound checked directly on a finite MDP.

    Measures ``eps = max_s (v*(s) - q*(s, policy(s)))`` and certifies that
    the policy's value loss never exceeds ``eps / (1 - gamma)`` (and the
    action-value loss ``gamma * eps / (1 - gamma)``).  Solves are exact up
    to ``tol``, so the slack is purely numerical.
    """
    star = value_iteration(mdp, cfg, tol)
    ev = policy_evaluation(mdp, policy, cfg, tol)
    gamma = cfg.gamma
    eps = 0.0
    for s in mdp.states:
        chosen = sum(p * star.q[(s, b)] for b, p in policy.probabilities(s).items())
        eps = max(eps, star.v[s] - chosen)
    v_loss = [star.v[s] - ev.v[s] for s in mdp.states]
    q_loss = [star.q[key] - ev.q[key] for key in ev.q]
    clauses = [
        BoundClause("value_loss", max(v_loss), eps / (1.0 - gamma)),
        BoundClause("action_value_loss", max(q_loss), gamma * eps / (1.0 - gamma)),
        BoundClause("value_dominance", -min(v_loss), 0.0),
        BoundClause("action_value_dominance", -min(q_loss), 0.0),
    ]
    slack = NUMERICAL_SLACK + 2.0 * tol / (1.0 - gamma)
    inputs = {"gamma": gamma, "epsilon": eps}
    return _finish("L_subopt_action", clauses, inputs, slack)
