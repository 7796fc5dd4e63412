"""Joint state-action abstraction maps and their induced objects.

A map sends (history, action) pairs onto a finite abstract state-action
space, with the structural constraint that the abstract state is a function
of the history alone.  From a map we derive the induced abstract process
and policy, pre-image queries, representative policies, and every
uniformity / representation error the certificates consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .dists import Categorical
from .history import (
    Action,
    Alphabets,
    Context,
    DiscountConfig,
    History,
    HistoryPolicy,
    OriginalProcess,
    QTable,
    histories_only,
)

State = Any
AbstractAction = Any


class AbstractionError(ValueError):
    """Malformed map, or a query that requires a non-empty pre-image."""


@dataclass(frozen=True)
class HomomorphismMap:
    """Structured map psi(h, a) = (f(h), g(h, a)).

    ``states`` and ``abstract_actions`` are finite ordered sets; their order
    drives deterministic iteration and tie-breaking.  ``memory_bound = k``
    declares that f and g read only the trailing k triples of the history,
    which is what makes long-horizon certification tractable.
    """

    states: tuple[State, ...]
    abstract_actions: tuple[AbstractAction, ...]
    state_fn: Callable[[History], State]
    action_fn: Callable[[History, Action], AbstractAction]
    memory_bound: Optional[int] = None
    name: str = ""
    _s_idx: Mapping[State, int] = field(init=False, repr=False, compare=False)
    _b_idx: Mapping[AbstractAction, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.states or not self.abstract_actions:
            raise AbstractionError("abstract state and action sets must be non-empty")
        object.__setattr__(self, "_s_idx", {s: i for i, s in enumerate(self.states)})
        object.__setattr__(self, "_b_idx", {b: i for i, b in enumerate(self.abstract_actions)})

    def state_of(self, h: History) -> State:
        """The single abstract state of a history."""
        s = self.state_fn(h)
        if s not in self._s_idx:
            raise AbstractionError(f"state {s!r} not in the declared state set")
        return s

    def action_of(self, h: History, a: Action) -> AbstractAction:
        b = self.action_fn(h, a)
        if b not in self._b_idx:
            raise AbstractionError(f"abstract action {b!r} not declared")
        return b

    def pair(self, h: History, a: Action) -> tuple[State, AbstractAction]:
        return (self.state_of(h), self.action_of(h, a))

    def state_index(self, s: State) -> int:
        return self._s_idx[s]

    def action_index(self, b: AbstractAction) -> int:
        return self._b_idx[b]

    # pre-image queries over an enumerated history set

    def histories_of(self, s: State, b: AbstractAction,
                     histories: Sequence[History], actions: Sequence[Action]) -> tuple[History, ...]:
        """Histories mapped onto (s, b) by some action."""
        out = []
        for h in histories:
            if self.state_of(h) != s:
                continue
            if any(self.action_of(h, a) == b for a in actions):
                out.append(h)
        return tuple(out)

    def actions_of(self, s: State, b: AbstractAction, h: History,
                   actions: Sequence[Action]) -> tuple[Action, ...]:
        """Original actions of ``h`` mapped onto (s, b); empty if f(h) != s."""
        if self.state_of(h) != s:
            return ()
        return tuple(a for a in actions if self.action_of(h, a) == b)

    def histories_of_state(self, s: State, histories: Sequence[History]) -> tuple[History, ...]:
        return tuple(h for h in histories if self.state_of(h) == s)

    @classmethod
    def from_context_tables(
        cls,
        state_table: Mapping[Context, State],
        action_table: Mapping[tuple[Context, Action], AbstractAction],
        memory_bound: int,
        states: Optional[tuple[State, ...]] = None,
        abstract_actions: Optional[tuple[AbstractAction, ...]] = None,
        name: str = "",
    ) -> "HomomorphismMap":
        """Build a trailing-k-context keyed map from explicit tables."""
        if states is None:
            seen: list[State] = []
            for s in state_table.values():
                if s not in seen:
                    seen.append(s)
            states = tuple(seen)
        if abstract_actions is None:
            seen_b: list[AbstractAction] = []
            for b in action_table.values():
                if b not in seen_b:
                    seen_b.append(b)
            abstract_actions = tuple(seen_b)

        def state_fn(h: History) -> State:
            key = h.context(memory_bound)
            try:
                return state_table[key]
            except KeyError:
                raise AbstractionError(f"state map has no entry for context {key!r}") from None

        def action_fn(h: History, a: Action) -> AbstractAction:
            key = (h.context(memory_bound), a)
            try:
                return action_table[key]
            except KeyError:
                raise AbstractionError(f"action map has no entry for {key!r}") from None

        return cls(states=states, abstract_actions=abstract_actions,
                   state_fn=state_fn, action_fn=action_fn,
                   memory_bound=memory_bound, name=name)


def identity_map(
    process: OriginalProcess,
    universe: Sequence[tuple[History, float]],
) -> HomomorphismMap:
    """Finest map over the process's contexts: every (context, action) pair
    is its own class.  Requires a declared memory bound."""
    k = process.memory_bound
    if k is None:
        raise AbstractionError("identity map requires a memory-bounded process")
    state_table: dict[Context, State] = {}
    for h, _ in universe:
        state_table.setdefault(h.context(k), h.context(k))
    action_table = {(ctx, a): a for ctx in state_table for a in process.alphabets.actions}
    return HomomorphismMap.from_context_tables(
        state_table, action_table, memory_bound=k,
        abstract_actions=process.alphabets.actions, name="identity")


def state_aggregation_map(
    process: OriginalProcess,
    universe: Sequence[tuple[History, float]],
    group_fn: Callable[[Context], State],
) -> HomomorphismMap:
    """State-only aggregation: group contexts, keep actions as they are."""
    k = process.memory_bound
    if k is None:
        raise AbstractionError("state aggregation requires a memory-bounded process")
    state_table: dict[Context, State] = {}
    for h, _ in universe:
        ctx = h.context(k)
        state_table.setdefault(ctx, group_fn(ctx))
    action_table = {(ctx, a): a for ctx in state_table for a in process.alphabets.actions}
    return HomomorphismMap.from_context_tables(
        state_table, action_table, memory_bound=k,
        abstract_actions=process.alphabets.actions, name="state-aggregation")


@dataclass(frozen=True)
class Classes:
    """Partition of enumerated (history, action) pairs by abstract pair."""

    pairs: Mapping[tuple[State, AbstractAction], tuple[tuple[History, Action], ...]]
    by_state: Mapping[State, tuple[History, ...]]

    def class_of(self, s: State, b: AbstractAction) -> tuple[tuple[History, Action], ...]:
        return self.pairs.get((s, b), ())


def partition_classes(
    psi: HomomorphismMap,
    histories: Sequence[History],
    actions: Sequence[Action],
) -> Classes:
    pairs: dict[tuple[State, AbstractAction], list[tuple[History, Action]]] = {}
    by_state: dict[State, list[History]] = {}
    for h in histories:
        s = psi.state_of(h)
        by_state.setdefault(s, []).append(h)
        for a in actions:
            b = psi.action_of(h, a)
            pairs.setdefault((s, b), []).append((h, a))
    return Classes(
        pairs={k: tuple(v) for k, v in pairs.items()},
        by_state={k: tuple(v) for k, v in by_state.items()},
    )


@dataclass(frozen=True)
class InducedProcess:
    """Push-forward of the original kernel onto (abstract state, reward)."""

    process: OriginalProcess
    psi: HomomorphismMap

    def kernel(self, h: History, a: Action) -> Categorical:
        return self.process.step(h, a).map(
            lambda outcome: (self.psi.state_of(h.extend(a, outcome[0], outcome[1])),
                             outcome[1]))


def induce_process(process: OriginalProcess, psi: HomomorphismMap) -> InducedProcess:
    return InducedProcess(process=process, psi=psi)


@dataclass(frozen=True)
class InducedPolicy:
    """Push-forward of a history policy onto abstract actions."""

    policy: HistoryPolicy
    psi: HomomorphismMap

    def probabilities(self, h: History) -> Categorical:
        return self.policy.probabilities(h).map(lambda a: self.psi.action_of(h, a))


def induce_policy(policy: HistoryPolicy, psi: HomomorphismMap) -> InducedPolicy:
    return InducedPolicy(policy=policy, psi=psi)


def representative_history(
    psi: HomomorphismMap,
    s: State,
    histories: Sequence[History],
    alphabets: Alphabets,
) -> History:
    """The designated member of f^-1(s): smallest by (length, alphabet order)."""
    members = psi.histories_of_state(s, histories)
    if not members:
        raise AbstractionError(f"state {s!r} has an empty pre-image")
    return min(members, key=lambda h: h.sort_key(alphabets))


def representative_policy(
    induced: InducedPolicy,
    psi: HomomorphismMap,
    s: State,
    histories: Sequence[History],
    alphabets: Alphabets,
) -> Categorical:
    """Abstract-action distribution of the designated member history."""
    rep = representative_history(psi, s, histories, alphabets)
    return induced.probabilities(rep)


@dataclass(frozen=True)
class GapReport:
    """Every uniformity / representation error measured on one instance.

    Suprema are taken over the supplied (enumerated) histories using value
    interval midpoints; ``tail_slack`` records the truncation width that a
    consumer must account for separately.
    """

    epsilon_mdp: float
    epsilon_q_uniform: float
    epsilon_v_uniform: float
    epsilon_q_rep: Mapping[State, float]
    epsilon_pi_rep: Mapping[State, float]
    epsilon_max: float
    tail_slack: float

    def as_dict(self) -> dict:
        return {
            "epsilon_mdp": self.epsilon_mdp,
            "epsilon_q_uniform": self.epsilon_q_uniform,
            "epsilon_v_uniform": self.epsilon_v_uniform,
            "epsilon_q_rep": {str(k): v for k, v in self.epsilon_q_rep.items()},
            "epsilon_pi_rep": {str(k): v for k, v in self.epsilon_pi_rep.items()},
            "epsilon_max": self.epsilon_max,
            "tail_slack": self.tail_slack,
        }


def _max_pairwise_l1(rows: list[Categorical]) -> float:
    """Largest pairwise L1 distance, deduplicating identical rows first."""
    keys: dict[tuple, int] = {}
    distinct: list[Categorical] = []
    for row in rows:
        key = tuple(sorted(((repr(o), round(p, 12)) for o, p in row.items())))
        if key not in keys:
            keys[key] = len(distinct)
            distinct.append(row)
    if len(distinct) <= 1:
        return 0.0
    outcomes: list = []
    seen = set()
    for row in distinct:
        for o, _ in row.items():
            if o not in seen:
                seen.add(o)
                outcomes.append(o)
    mat = np.zeros((len(distinct), len(outcomes)))
    for i, row in enumerate(distinct):
        for j, o in enumerate(outcomes):
            mat[i, j] = row[o]
    best = 0.0
    for i in range(len(distinct) - 1):
        d = float(np.max(np.abs(mat[i + 1:] - mat[i]).sum(axis=1)))
        best = max(best, d)
    return best


def measure_epsilon_mdp(induced: InducedProcess, classes: Classes) -> float:
    """Largest within-class total-variation gap of the induced kernel.

    Zero exactly when the induced process satisfies the one-step
    bisimulation-style condition on every merged pair.
    """
    worst = 0.0
    for members in classes.pairs.values():
        rows = [induced.kernel(h, a) for h, a in members]
        worst = max(worst, 0.5 * _max_pairwise_l1(rows))
    return worst


def measure_epsilon_q_uniform(classes: Classes, qtable: QTable) -> float:
    """Largest within-class spread of action-value midpoints."""
    worst = 0.0
    for members in classes.pairs.values():
        vals = [qtable.mid(h, a) for h, a in members]
        worst = max(worst, max(vals) - min(vals))
    return worst


def measure_epsilon_v_uniform(classes: Classes, v_mid: Mapping[History, float]) -> float:
    """Largest within-state spread of value midpoints."""
    worst = 0.0
    for members in classes.by_state.values():
        vals = [v_mid[h] for h in members]
        worst = max(worst, max(vals) - min(vals))
    return worst


def measure_epsilon_q_rep(
    psi: HomomorphismMap,
    classes: Classes,
    qtable: QTable,
    alphabets: Alphabets,
) -> dict[State, float]:
    """Per-state representation error of the action-value function.

    The representative of each (s, b) is its smallest member pair under the
    (history, action-index) order; the error is the largest deviation of any
    member from its representative, maximized over the state's classes.
    """
    out: dict[State, float] = {}
    for (s, _), members in classes.pairs.items():
        rep = min(members, key=lambda ha: (ha[0].sort_key(alphabets),
                                           alphabets.action_index(ha[1])))
        rep_q = qtable.mid(*rep)
        spread = max(abs(qtable.mid(h, a) - rep_q) for h, a in members)
        out[s] = max(out.get(s, 0.0), spread)
    for s in classes.by_state:
        out.setdefault(s, 0.0)
    return out


def measure_epsilon_pi_rep(
    induced_policy: InducedPolicy,
    psi: HomomorphismMap,
    classes: Classes,
    alphabets: Alphabets,
) -> dict[State, float]:
    """Per-state policy representation error: largest L1 distance between the
    representative's induced abstract policy and any member's."""
    out: dict[State, float] = {}
    for s, members in classes.by_state.items():
        rep = representative_policy(induced_policy, psi, s, members, alphabets)
        out[s] = max(rep.l1_distance(induced_policy.probabilities(h)) for h in members)
    return out


def gap_report(
    process: OriginalProcess,
    policy: HistoryPolicy,
    psi: HomomorphismMap,
    qtable: QTable,
    cfg: DiscountConfig,
    histories: Sequence[History],
) -> GapReport:
    """Measure every abstraction-quality number on the enumerated set.

    ``histories`` may be plain histories or (history, weight) pairs.
    """
    actions = process.alphabets.actions
    histories = histories_only(histories)
    classes = partition_classes(psi, histories, actions)
    induced = induce_process(process, psi)
    induced_pol = induce_policy(policy, psi)
    v_mid = {
        h: sum(pa * qtable.mid(h, a) for a, pa in policy.probabilities(h).items())
        for h in histories
    }
    eps_q_rep = measure_epsilon_q_rep(psi, classes, qtable, process.alphabets)
    eps_pi_rep = measure_epsilon_pi_rep(induced_pol, psi, classes, process.alphabets)
    gamma = cfg.gamma
    eps_max = max(eps_q_rep[s] + eps_pi_rep[s] / (1.0 - gamma) for s in eps_q_rep)
    return GapReport(
        epsilon_mdp=measure_epsilon_mdp(induced, classes),
        epsilon_q_uniform=measure_epsilon_q_uniform(classes, qtable),
        epsilon_v_uniform=measure_epsilon_v_uniform(classes, v_mid),
        epsilon_q_rep=eps_q_rep,
        epsilon_pi_rep=eps_pi_rep,
        epsilon_max=eps_max,
        tail_slack=cfg.tail,
    )
