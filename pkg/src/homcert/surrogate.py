"""Stochastic inverses and the surrogate MDP they induce.

A stochastic inverse assigns, to each abstract state-action pair, a
distribution over its member (history, action) pairs.  Averaging the
induced abstract kernel over the inverse yields a finite MDP on the
abstract space, the object the solvers actually work on.  The module also
carries the joint-distribution bookkeeping behind the induced action
measure on original actions and its deviation bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

from .abstraction import (
    AbstractAction,
    HomomorphismMap,
    InducedProcess,
    State,
    partition_classes,
)
from .dists import Categorical
from .history import (
    Action,
    History,
    HistoryPolicy,
    QTable,
    VTable,
)


class InverseError(ValueError):
    """Inverse construction failed (empty class or zero visitation mass)."""


class DegenerateSupportError(ValueError):
    """An abstract action has policy mass but zero inverse mass at a state."""


@dataclass(frozen=True)
class StochasticInverse:
    """Per-class distributions over member (history, action) pairs.

    Support constraint: weights(s, b) may only charge pairs that the map
    sends to (s, b); this is validated on construction.
    """

    psi: HomomorphismMap
    weights: Mapping[tuple[State, AbstractAction], Categorical]
    mode: str = "uniform"

    def __post_init__(self) -> None:
        for (s, b), dist in self.weights.items():
            for (h, a), _ in dist.items():
                if self.psi.pair(h, a) != (s, b):
                    raise InverseError(
                        f"inverse for {(s, b)!r} charges pair mapped to "
                        f"{self.psi.pair(h, a)!r}")

    def distribution(self, s: State, b: AbstractAction) -> Categorical:
        try:
            return self.weights[(s, b)]
        except KeyError:
            raise InverseError(f"no inverse weights for class {(s, b)!r}") from None

    def classes(self) -> tuple[tuple[State, AbstractAction], ...]:
        return tuple(self.weights)


def build_inverse(
    psi: HomomorphismMap,
    universe: Sequence[tuple[History, float]],
    mode: str = "uniform",
    *,
    actions: Sequence[Action],
    behavior: Optional[HistoryPolicy] = None,
) -> StochasticInverse:
    """Construct a stochastic inverse over the enumerated classes.

    ``uniform`` puts equal weight on every member pair of a class;
    ``visitation`` weights members by reach-probability times the behavior
    policy's action probability, renormalized per class.  Classes that never
    appear in the universe are omitted; a class whose visitation mass is
    zero is an error.
    """
    if mode not in ("uniform", "visitation"):
        raise InverseError(f"unknown inverse mode {mode!r}")
    if mode == "visitation" and behavior is None:
        raise InverseError("visitation mode needs a behavior policy")
    reach = {h: w for h, w in universe}
    classes = partition_classes(psi, list(reach), actions)
    weights: dict[tuple[State, AbstractAction], Categorical] = {}
    for key, members in classes.pairs.items():
        if not members:
            raise InverseError(f"class {key!r} has no enumerated members")
        if mode == "uniform":
            weights[key] = Categorical.from_weights((ha, 1.0) for ha in members)
        else:
            raw = [(
                (h, a),
                reach[h] * behavior.probabilities(h)[a],
            ) for h, a in members]
            total = sum(w for _, w in raw)
            if total <= 0.0:
                raise InverseError(
                    f"class {key!r} has zero visitation mass under the behavior policy")
            weights[key] = Categorical.from_weights(raw)
    return StochasticInverse(psi=psi, weights=weights, mode=mode)


@dataclass(frozen=True)
class SurrogateMdp:
    """Finite MDP on the abstract space: kernel rows over (next state, reward).

    ``dangling`` lists states that appear as transition targets but have no
    outgoing rows; solvers treat them as absorbing with value zero.  Rows
    normalize and rewards stay within [0, 1] by construction.
    """

    states: tuple[State, ...]
    actions: tuple[AbstractAction, ...]
    kernel: Mapping[tuple[State, AbstractAction], Categorical]
    rewards: tuple[Any, ...]
    dangling: tuple[State, ...] = ()

    def available(self, s: State) -> tuple[AbstractAction, ...]:
        return tuple(b for b in self.actions if (s, b) in self.kernel)

    def expected_reward(self, s: State, b: AbstractAction) -> float:
        return sum(p * float(r) for (_, r), p in self.kernel[(s, b)].items())


def make_mdp(
    states: Sequence[State],
    actions: Sequence[AbstractAction],
    kernel: Mapping[tuple[State, AbstractAction], Any],
    rewards: Sequence[Any],
) -> SurrogateMdp:
    """Assemble a finite MDP container from raw rows, validating each row."""
    rows = {}
    for key, row in kernel.items():
        rows[key] = row if isinstance(row, Categorical) else Categorical(
            row.items() if hasattr(row, "items") else row)
    row_states = {s for s, _ in rows}
    targets = {s2 for row in rows.values() for (s2, _), _ in row.items()}
    dangling = tuple(sorted((s for s in targets if s not in row_states), key=repr))
    return SurrogateMdp(states=tuple(s for s in states if s in row_states),
                        actions=tuple(actions), kernel=rows,
                        rewards=tuple(rewards), dangling=dangling)


def surrogate_mdp(induced: InducedProcess, inverse: StochasticInverse) -> SurrogateMdp:
    """Average the induced abstract kernel over the inverse's class weights."""
    psi = induced.psi
    rows: dict[tuple[State, AbstractAction], Categorical] = {}
    for (s, b) in inverse.classes():
        mixture: dict[tuple[State, Any], float] = {}
        order: list[tuple[State, Any]] = []
        for (h, a), w in inverse.distribution(s, b).items():
            for outcome, p in induced.kernel(h, a).items():
                if outcome not in mixture:
                    mixture[outcome] = 0.0
                    order.append(outcome)
                mixture[outcome] += w * p
        rows[(s, b)] = Categorical((o, mixture[o]) for o in order)
    row_states = [s for s in psi.states if any((s, b) in rows for b in psi.abstract_actions)]
    targets = {s2 for row in rows.values() for (s2, _), _ in row.items()}
    dangling = tuple(sorted((s for s in targets if s not in set(row_states)),
                            key=repr))
    return SurrogateMdp(states=tuple(row_states), actions=psi.abstract_actions,
                        kernel=rows, rewards=induced.process.alphabets.rewards,
                        dangling=dangling)


def b_average_q(
    qtable: QTable,
    inverse: StochasticInverse,
    s: State,
    b: AbstractAction,
) -> float:
    """Inverse-weighted average of action-value midpoints over a class."""
    return sum(w * qtable.mid(h, a)
               for (h, a), w in inverse.distribution(s, b).items())


@dataclass(frozen=True)
class ClassJoint:
    """Joint distribution over enumerated (history, action) pairs.

    Combines the inverse's per-class conditionals with class-level masses
    derived from reach probabilities under a declared behavior policy.  All
    the conditional marginals entering the induced action measure are read
    from this joint.
    """

    psi: HomomorphismMap
    joint: Mapping[tuple[History, Action], float]
    history_mass: Mapping[History, float]
    class_mass: Mapping[tuple[State, AbstractAction], float]
    state_mass: Mapping[State, float]

    def action_pair_weight(self, h: History, a: Action) -> float:
        """B(a, b | h) for the pair's own b = g(h, a)."""
        jh = self.history_mass.get(h, 0.0)
        if jh == 0.0:
            return 0.0
        return self.joint.get((h, a), 0.0) / jh

    def abstract_action_weight(self, s: State, b: AbstractAction) -> float:
        """B(b | s)."""
        sm = self.state_mass.get(s, 0.0)
        if sm == 0.0:
            return 0.0
        return self.class_mass.get((s, b), 0.0) / sm

    def history_weight(self, h: History, s: State) -> float:
        """B(h | s)."""
        sm = self.state_mass.get(s, 0.0)
        if sm == 0.0:
            return 0.0
        return self.history_mass.get(h, 0.0) / sm


def class_joint(
    psi: HomomorphismMap,
    universe: Sequence[tuple[History, float]],
    inverse: StochasticInverse,
    behavior: HistoryPolicy,
    *,
    actions: Sequence[Action],
) -> ClassJoint:
    """Build the joint behind the induced action measure.

    Class masses are reach-probability times behavior action probability,
    summed over members and normalized; within a class, mass follows the
    inverse's conditional weights.
    """
    reach = {h: w for h, w in universe}
    class_mass: dict[tuple[State, AbstractAction], float] = {}
    for h, w in universe:
        dist = behavior.probabilities(h)
        for a in actions:
            pa = dist[a]
            if pa == 0.0:
                continue
            key = psi.pair(h, a)
            class_mass[key] = class_mass.get(key, 0.0) + w * pa
    total = sum(class_mass.values())
    if total <= 0.0:
        raise InverseError("behavior policy reaches no enumerated class")
    class_mass = {k: v / total for k, v in class_mass.items()}

    joint: dict[tuple[History, Action], float] = {}
    for key, mass in class_mass.items():
        if mass == 0.0:
            continue
        for (h, a), w in inverse.distribution(*key).items():
            joint[(h, a)] = joint.get((h, a), 0.0) + mass * w
    history_mass: dict[History, float] = {}
    for (h, _), w in joint.items():
        history_mass[h] = history_mass.get(h, 0.0) + w
    state_mass: dict[State, float] = {}
    for (s, _), m in class_mass.items():
        state_mass[s] = state_mass.get(s, 0.0) + m
    return ClassJoint(psi=psi, joint=joint, history_mass=history_mass,
                      class_mass=class_mass, state_mass=state_mass)


def induced_action_weights(
    joint: ClassJoint,
    pi,
    h: History,
    s: State,
    *,
    actions: Sequence[Action],
) -> dict[Action, float]:
    """Raw induced measure on original actions (not renormalized).

    For each original action the single surviving term is
    ``B(a, g(h,a) | h) / B(g(h,a) | s) * pi(g(h,a) | s)`` with the 0/0 := 0
    convention; a positive-policy abstract action with zero inverse mass is
    a degenerate-support error.
    """
    psi = joint.psi
    pi_dist = pi.probabilities(s)
    for b, pb in pi_dist.items():
        if pb > 0.0 and joint.abstract_action_weight(s, b) == 0.0:
            raise DegenerateSupportError(
                f"pi({b!r} | {s!r}) > 0 but the inverse never selects it")
    out: dict[Action, float] = {}
    for a in actions:
        b = psi.action_of(h, a)
        pb = pi_dist[b]
        if pb == 0.0:
            out[a] = 0.0
            continue
        denom = joint.abstract_action_weight(s, b)
        numer = joint.action_pair_weight(h, a)
        out[a] = 0.0 if numer == 0.0 else (numer / denom) * pb
    return out


def induced_action_measure(
    joint: ClassJoint,
    pi,
    h: History,
    s: State,
    *,
    actions: Sequence[Action],
) -> Categorical:
    """Normalized induced distribution over original actions."""
    weights = induced_action_weights(joint, pi, h, s, actions=actions)
    return Categorical.from_weights(weights.items())


def epsilon_b(
    qtable: QTable,
    vtable: VTable,
    joint: ClassJoint,
    pi,
    psi: HomomorphismMap,
    histories: Sequence[History],
    *,
    actions: Sequence[Action],
) -> float:
    """Deviation of the raw induced-measure action-value average from the value.

    Supremum over the enumerated histories of
    ``| sum_a Q(h, a) * Bpi(a | h, s) - V(h) |`` with s = f(h), computed on
    interval midpoints.
    """
    worst = 0.0
    for h in histories:
        s = psi.state_of(h)
        weights = induced_action_weights(joint, pi, h, s, actions=actions)
        avg = sum(qtable.mid(h, a) * w for a, w in weights.items())
        worst = max(worst, abs(avg - vtable.mid(h)))
    return worst
