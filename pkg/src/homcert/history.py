"""History-based decision processes and exact truncated value functions.

The environment is a stochastic kernel from (history, action) to finite
distributions over (observation, reward).  Values are computed by depth-T
backward induction; every returned interval has width exactly
``gamma**T / (1 - gamma)``, the geometric bound on the discarded tail
(rewards lie in [0, 1]).

When a kernel (and, for policy values, the policy) declares a memory bound
k, the induction memoizes on the trailing-k triple context, which makes
long horizons cheap on desk-scale instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .dists import Categorical, DistributionError

Action = Any
Observation = Any
Reward = Fraction

DEFAULT_HISTORY_CAP = 500_000
DEFAULT_EXPANSION_CAP = 5_000_000


class CapExceededError(RuntimeError):
    """Enumeration or induction grew past the configured size cap."""


class ProcessError(ValueError):
    """Malformed process, policy, or alphabet definition."""


class ExactReward(Fraction):
    """Fraction with a cached hash.

    Rewards sit inside the keys of every hot dictionary (kernel rows,
    history contexts, value tables); plain Fractions recompute a modular
    hash on every lookup, which dominates profiles at desk scale.
    """

    __slots__ = ("_cached_hash",)

    def __hash__(self) -> int:
        h = getattr(self, "_cached_hash", None)
        if h is None:
            h = super().__hash__()
            object.__setattr__(self, "_cached_hash", h)
        return h


def as_reward(value: Any) -> Fraction:
    """Coerce to an exact rational reward.

    Floats go through their shortest decimal repr so that round numbers
    like 0.05 store as 1/20 and round-trip to the same float.
    """
    if isinstance(value, ExactReward):
        return value
    if isinstance(value, (Fraction, int)):
        return ExactReward(value)
    if isinstance(value, float):
        return ExactReward(Fraction(repr(value)))
    if isinstance(value, str):
        return ExactReward(Fraction(value))
    raise ProcessError(f"cannot interpret {value!r} as a rational reward")


@dataclass(frozen=True)
class Alphabets:
    """Finite ordered action/observation/reward sets.

    The tuple order is the total order used for deterministic iteration
    and tie-breaking everywhere downstream.
    """

    actions: tuple[Action, ...]
    observations: tuple[Observation, ...]
    rewards: tuple[Reward, ...]
    _a_idx: Mapping[Action, int] = field(init=False, repr=False, compare=False)
    _o_idx: Mapping[Observation, int] = field(init=False, repr=False, compare=False)
    _r_idx: Mapping[Reward, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name, values in (("actions", self.actions),
                             ("observations", self.observations),
                             ("rewards", self.rewards)):
            if len(values) == 0:
                raise ProcessError(f"{name} must be non-empty")
            if len(set(values)) != len(values):
                raise ProcessError(f"{name} contains duplicates")
        rewards = tuple(as_reward(r) for r in self.rewards)
        for r in rewards:
            if not (0 <= r <= 1):
                raise ProcessError(f"reward {r} outside [0, 1]")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "_a_idx", {a: i for i, a in enumerate(self.actions)})
        object.__setattr__(self, "_o_idx", {o: i for i, o in enumerate(self.observations)})
        object.__setattr__(self, "_r_idx", {r: i for i, r in enumerate(rewards)})

    def action_index(self, a: Action) -> int:
        return self._a_idx[a]

    def observation_index(self, o: Observation) -> int:
        return self._o_idx[o]

    def reward_index(self, r: Reward) -> int:
        return self._r_idx[r]

    def triple_index(self, triple: tuple[Action, Observation, Reward]) -> tuple[int, int, int]:
        a, o, r = triple
        return (self._a_idx[a], self._o_idx[o], self._r_idx[r])


Triple = tuple[Action, Observation, Reward]
Context = tuple[Triple, ...]


@dataclass(frozen=True)
class History:
    """A finite alternating (action, observation, reward) sequence."""

    triples: tuple[Triple, ...] = ()

    def __len__(self) -> int:
        return len(self.triples)

    def extend(self, a: Action, o: Observation, r: Reward) -> "History":
        return History(self.triples + ((a, o, r),))

    def context(self, k: Optional[int]) -> Context:
        """Trailing-k triples; the whole history when k is None."""
        if k is None:
            return self.triples
        if k == 0:
            return ()
        return self.triples[-k:]

    def last_observation(self) -> Optional[Observation]:
        return self.triples[-1][1] if self.triples else None

    def sort_key(self, alphabets: Alphabets) -> tuple:
        """Deterministic (length, alphabet-lexicographic) order key."""
        return (len(self.triples), tuple(alphabets.triple_index(t) for t in self.triples))


EMPTY_HISTORY = History()


@dataclass(frozen=True)
class DiscountConfig:
    """Discount factor and truncation horizon for value computations."""

    gamma: float
    horizon: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma < 1.0):
            raise ProcessError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise ProcessError("horizon must be at least 1")

    @property
    def tail(self) -> float:
        """Width of every truncated value interval: gamma**T / (1 - gamma)."""
        return self.gamma ** self.horizon / (1.0 - self.gamma)

    @property
    def value_bound(self) -> float:
        return 1.0 / (1.0 - self.gamma)


@dataclass(frozen=True)
class ValueInterval:
    """Certified enclosure of an infinite-horizon (action-)value."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.lower > self.upper + 1e-15:
            raise ProcessError(f"empty interval [{self.lower}, {self.upper}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class OriginalProcess:
    """Environment kernel: (history, action) -> distribution over (obs, reward).

    ``memory_bound = k`` declares that the kernel reads only the trailing k
    triples of the history; None means the full history may matter.  Kernels
    are built from validated ``Categorical`` rows, so malformed tables are
    rejected at construction time and never at query time.
    """

    alphabets: Alphabets
    kernel: Callable[[History, Action], Categorical]
    memory_bound: Optional[int] = None
    name: str = ""

    def step(self, h: History, a: Action) -> Categorical:
        if a not in self.alphabets._a_idx:
            raise ProcessError(f"action {a!r} not in the action alphabet")
        return self.kernel(h, a)

    def context_key(self, h: History) -> Context:
        return h.context(self.memory_bound)

    @classmethod
    def from_context_table(
        cls,
        alphabets: Alphabets,
        table: Mapping[tuple[Context, Action], Any],
        memory_bound: int,
        name: str = "",
    ) -> "OriginalProcess":
        """Build a k-memory process from an explicit context-keyed table.

        Table values may be ``Categorical`` over (obs, reward) or plain
        mappings/iterables of ((obs, reward), prob); all rows are validated
        here.
        """
        rows: dict[tuple[Context, Action], Categorical] = {}
        for (ctx, a), row in table.items():
            if not isinstance(row, Categorical):
                pairs = row.items() if hasattr(row, "items") else row
                try:
                    row = Categorical(pairs)
                except DistributionError as exc:
                    raise ProcessError(f"bad kernel row at {(ctx, a)}: {exc}") from exc
            for (o, r), _ in row.items():
                if o not in alphabets._o_idx:
                    raise ProcessError(f"observation {o!r} not in alphabet")
                if r not in alphabets._r_idx:
                    raise ProcessError(f"reward {r!r} not in alphabet")
            # re-key outcomes onto the alphabet's interned reward objects so
            # every stored key shares one cached hash per value
            row = Categorical(
                ((o, alphabets.rewards[alphabets.reward_index(r)]), p)
                for (o, r), p in row.items())
            rows[(ctx, a)] = row

        def kernel(h: History, a: Action) -> Categorical:
            key = (h.context(memory_bound), a)
            try:
                return rows[key]
            except KeyError:
                raise ProcessError(f"kernel has no row for context {key!r}") from None

        return cls(alphabets=alphabets, kernel=kernel, memory_bound=memory_bound, name=name)


def step_distribution(process: OriginalProcess, h: History, a: Action) -> Categorical:
    """One environment step: the distribution over (observation, reward)."""
    return process.step(h, a)


@dataclass(frozen=True)
class HistoryPolicy:
    """History-based policy: history -> distribution over actions."""

    rule: Callable[[History], Categorical]
    memory_bound: Optional[int] = None
    name: str = ""

    def probabilities(self, h: History) -> Categorical:
        return self.rule(h)

    def context_key(self, h: History) -> Context:
        return h.context(self.memory_bound)

    @classmethod
    def uniform(cls, alphabets: Alphabets, name: str = "uniform") -> "HistoryPolicy":
        dist = Categorical.from_weights((a, 1.0) for a in alphabets.actions)
        return cls(rule=lambda h: dist, memory_bound=0, name=name)

    @classmethod
    def deterministic(
        cls,
        choose: Callable[[History], Action],
        memory_bound: Optional[int] = None,
        name: str = "",
    ) -> "HistoryPolicy":
        return cls(rule=lambda h: Categorical.point(choose(h)),
                   memory_bound=memory_bound, name=name)

    @classmethod
    def from_context_table(
        cls,
        table: Mapping[Context, Categorical],
        memory_bound: int,
        name: str = "",
    ) -> "HistoryPolicy":
        def rule(h: History) -> Categorical:
            key = h.context(memory_bound)
            try:
                return table[key]
            except KeyError:
                raise ProcessError(f"policy has no row for context {key!r}") from None

        return cls(rule=rule, memory_bound=memory_bound, name=name)


def enumerate_histories(
    process: OriginalProcess,
    depth: int,
    support_policy: Optional[HistoryPolicy] = None,
    *,
    max_histories: int = DEFAULT_HISTORY_CAP,
) -> list[tuple[History, float]]:
    """All positive-probability histories up to ``depth`` with reach weights.

    Action weights come from ``support_policy`` (uniform when omitted), so
    the reach probabilities at each depth level sum to one.  Histories whose
    reach probability is zero under the support policy are pruned.
    """
    if depth < 0:
        raise ProcessError("depth must be non-negative")
    weights = support_policy or HistoryPolicy.uniform(process.alphabets)
    out: list[tuple[History, float]] = [(EMPTY_HISTORY, 1.0)]
    frontier: list[tuple[History, float]] = [(EMPTY_HISTORY, 1.0)]
    for _ in range(depth):
        nxt: list[tuple[History, float]] = []
        for h, p in frontier:
            action_dist = weights.probabilities(h)
            for a in process.alphabets.actions:
                pa = action_dist[a]
                if pa == 0.0:
                    continue
                for (o, r), po in process.step(h, a).items():
                    nxt.append((h.extend(a, o, r), p * pa * po))
        if len(out) + len(nxt) > max_histories:
            raise CapExceededError(
                f"history enumeration exceeds cap of {max_histories}")
        out.extend(nxt)
        frontier = nxt
    return out


class _ContextDP:
    """Layered dynamic program over the reachable context graph.

    For memory-k kernels (and policies), truncated values factor through
    trailing-k contexts, so the whole induction collapses onto a finite
    graph swept once per depth with flat numpy arrays.
    """

    def __init__(self, process: OriginalProcess, policy: Optional[HistoryPolicy],
                 k: int, gamma: float, cap: int):
        self.process = process
        self.policy = policy
        self.k = k
        self.gamma = gamma
        self.cap = cap
        self.index: dict[Context, int] = {}
        self.reps: list[History] = []
        self._layers: list = []
        self._frozen = False
        self._add_node(EMPTY_HISTORY)
        self._explore(0)

    def _add_node(self, h: History) -> int:
        ctx = h.context(self.k)
        node = len(self.reps)
        if node >= self.cap:
            raise CapExceededError(
                f"context graph exceeds cap of {self.cap} nodes")
        self.index[ctx] = node
        self.reps.append(h)
        return node

    def _explore(self, start: int) -> None:
        frontier = list(range(start, len(self.reps)))
        while frontier:
            nxt = []
            for node in frontier:
                h = self.reps[node]
                for a in self.process.alphabets.actions:
                    for (o, r), _ in self.process.step(h, a).items():
                        h2 = h.extend(a, o, r)
                        if h2.context(self.k) not in self.index:
                            nxt.append(self._add_node(h2))
            frontier = nxt
        self._frozen = False

    def _freeze(self) -> None:
        actions = self.process.alphabets.actions
        n, n_a = len(self.reps), len(actions)
        edge_cell: list[int] = []
        edge_next: list[int] = []
        edge_p: list[float] = []
        edge_r: list[float] = []
        for node, h in enumerate(self.reps):
            for ai, a in enumerate(actions):
                cell = node * n_a + ai
                for (o, r), p in self.process.step(h, a).items():
                    edge_cell.append(cell)
                    edge_next.append(self.index[h.extend(a, o, r).context(self.k)])
                    edge_p.append(p)
                    edge_r.append(float(r))
        self._edge_cell = np.asarray(edge_cell, dtype=np.int64)
        self._edge_next = np.asarray(edge_next, dtype=np.int64)
        self._edge_p = np.asarray(edge_p)
        self._edge_r = np.asarray(edge_r)
        self._n_cells = n * n_a
        self._n_actions = n_a
        self._a_idx = {a: i for i, a in enumerate(actions)}
        if self.policy is not None:
            w = np.zeros((n, n_a))
            for node, h in enumerate(self.reps):
                dist = self.policy.probabilities(h)
                for ai, a in enumerate(actions):
                    w[node, ai] = dist[a]
            self._policy_w = w
        self._layers = [np.zeros(n)]
        self._q_layers = [np.zeros(self._n_cells)]
        self._frozen = True

    def node_of(self, h: History) -> int:
        ctx = h.context(self.k)
        node = self.index.get(ctx)
        if node is None:
            # a context outside the from-scratch closure: graft it in
            node = self._add_node(h)
            self._explore(node)
        return node

    def _cell_values(self, v):
        contrib = self._edge_p * (self._edge_r + self.gamma * v[self._edge_next])
        return np.bincount(self._edge_cell, weights=contrib,
                           minlength=self._n_cells)

    def _level(self, t: int):
        if not self._frozen:
            self._freeze()
        while len(self._layers) <= t:
            q = self._cell_values(self._layers[-1])
            qmat = q.reshape(-1, self._n_actions)
            if self.policy is None:
                v = qmat.max(axis=1)
            else:
                v = (self._policy_w * qmat).sum(axis=1)
            self._q_layers.append(q)
            self._layers.append(v)
        return self._layers[t]

    def v_lower(self, h: History, t: int) -> float:
        if t <= 0:
            return 0.0
        node = self.node_of(h)
        return float(self._level(t)[node])

    def q_lower(self, h: History, a: Action, t: int) -> float:
        if t <= 0:
            return 0.0
        node = self.node_of(h)
        self._level(t)
        return float(self._q_layers[t][node * self._n_actions + self._a_idx[a]])

    def greedy_action(self, h: History, t: int) -> Action:
        best_a, best_q = None, -1.0
        for a in self.process.alphabets.actions:
            q = self.q_lower(h, a, t)
            if q > best_q + 1e-15:
                best_a, best_q = a, q
        return best_a


class ValueComputer:
    """Backward-induction engine for truncated (action-)values.

    With ``policy=None`` it computes optimal values and exposes the greedy
    action (ties broken by the action alphabet order).  Lower values assume
    all tail rewards are 0; the matching upper bound adds the geometric
    tail, so intervals always have width exactly ``cfg.tail``.

    When the kernel (and policy) declare memory bounds, the induction runs
    as a layered sweep over the finite context graph; otherwise it recurses
    over histories with an expansion cap.
    """

    def __init__(
        self,
        process: OriginalProcess,
        cfg: DiscountConfig,
        policy: Optional[HistoryPolicy] = None,
        *,
        max_expansions: int = DEFAULT_EXPANSION_CAP,
    ):
        self.process = process
        self.cfg = cfg
        self.policy = policy
        if policy is None:
            self._k = process.memory_bound
        elif process.memory_bound is None or policy.memory_bound is None:
            self._k = None
        else:
            self._k = max(process.memory_bound, policy.memory_bound)
        self._v: dict[tuple[Context, int], float] = {}
        self._greedy: dict[Context, Action] = {}
        self._expansions = 0
        self._cap = max_expansions
        self._dp: Optional[_ContextDP] = None
        if self._k is not None:
            self._dp = _ContextDP(process, policy, self._k, cfg.gamma,
                                  max_expansions)

    def q_lower(self, h: History, a: Action, t: Optional[int] = None) -> float:
        t = self.cfg.horizon if t is None else t
        if self._dp is not None:
            return self._dp.q_lower(h, a, t)
        if t <= 0:
            return 0.0
        gamma = self.cfg.gamma
        total = 0.0
        for (o, r), p in self.process.step(h, a).items():
            total += p * (float(r) + gamma * self.v_lower(h.extend(a, o, r), t - 1))
        return total

    def v_lower(self, h: History, t: Optional[int] = None) -> float:
        t = self.cfg.horizon if t is None else t
        if self._dp is not None:
            return self._dp.v_lower(h, t)
        if t <= 0:
            return 0.0
        key = (h.triples, t)
        cached = self._v.get(key)
        if cached is not None:
            return cached
        self._expansions += 1
        if self._expansions > self._cap:
            raise CapExceededError(
                f"value induction exceeds cap of {self._cap} node expansions")
        if self.policy is None:
            value = max(self.q_lower(h, a, t) for a in self.process.alphabets.actions)
        else:
            value = 0.0
            for a, pa in self.policy.probabilities(h).items():
                value += pa * self.q_lower(h, a, t)
        self._v[key] = value
        return value

    def q_interval(self, h: History, a: Action) -> ValueInterval:
        low = self.q_lower(h, a)
        return ValueInterval(low, low + self.cfg.tail)

    def v_interval(self, h: History) -> ValueInterval:
        low = self.v_lower(h)
        return ValueInterval(low, low + self.cfg.tail)

    def greedy_action(self, h: History) -> Action:
        if self.policy is not None:
            raise ProcessError("greedy_action only applies to optimal computations")
        if self._dp is not None:
            ctx = h.context(self._k)
            cached = self._greedy.get(ctx)
            if cached is None:
                cached = self._dp.greedy_action(h, self.cfg.horizon)
                self._greedy[ctx] = cached
            return cached
        best_a, best_q = None, -1.0
        for a in self.process.alphabets.actions:
            q = self.q_lower(h, a)
            if q > best_q + 1e-15:
                best_a, best_q = a, q
        return best_a


def q_value(
    process: OriginalProcess,
    policy: HistoryPolicy,
    h: History,
    a: Action,
    cfg: DiscountConfig,
) -> ValueInterval:
    """Interval enclosing the infinite-horizon action value of ``policy``."""
    return ValueComputer(process, cfg, policy).q_interval(h, a)


def v_value(
    process: OriginalProcess,
    policy: HistoryPolicy,
    h: History,
    cfg: DiscountConfig,
) -> ValueInterval:
    """Interval enclosing the infinite-horizon value of ``policy``."""
    return ValueComputer(process, cfg, policy).v_interval(h)


@dataclass
class QTable:
    entries: dict[tuple[History, Action], ValueInterval]
    cfg: DiscountConfig

    def interval(self, h: History, a: Action) -> ValueInterval:
        return self.entries[(h, a)]

    def mid(self, h: History, a: Action) -> float:
        return self.entries[(h, a)].midpoint


@dataclass
class VTable:
    entries: dict[History, ValueInterval]
    cfg: DiscountConfig

    def interval(self, h: History) -> ValueInterval:
        return self.entries[h]

    def mid(self, h: History) -> float:
        return self.entries[h].midpoint


@dataclass
class PolicyValues:
    q: QTable
    v: VTable


@dataclass
class OptimalValues:
    q: QTable
    v: VTable
    policy: HistoryPolicy  # deterministic greedy, ties by action order


def histories_only(histories: Sequence) -> list[History]:
    out = []
    for item in histories:
        out.append(item[0] if isinstance(item, tuple) else item)
    return out


def optimal_q(
    process: OriginalProcess,
    cfg: DiscountConfig,
    histories: Sequence,
    *,
    max_expansions: int = DEFAULT_EXPANSION_CAP,
) -> OptimalValues:
    """Optimal truncated values over the given histories plus the greedy policy.

    ``histories`` may be plain histories or (history, weight) pairs as
    produced by :func:`enumerate_histories`.
    """
    computer = ValueComputer(process, cfg, max_expansions=max_expansions)
    q_entries: dict[tuple[History, Action], ValueInterval] = {}
    v_entries: dict[History, ValueInterval] = {}
    for h in histories_only(histories):
        for a in process.alphabets.actions:
            q_entries[(h, a)] = computer.q_interval(h, a)
        v_entries[h] = computer.v_interval(h)
    policy = HistoryPolicy.deterministic(
        computer.greedy_action, memory_bound=process.memory_bound, name="greedy")
    return OptimalValues(QTable(q_entries, cfg), VTable(v_entries, cfg), policy)


def policy_values(
    process: OriginalProcess,
    policy: HistoryPolicy,
    cfg: DiscountConfig,
    histories: Sequence,
    *,
    max_expansions: int = DEFAULT_EXPANSION_CAP,
) -> PolicyValues:
    """Truncated action-values and values of ``policy`` over the histories."""
    computer = ValueComputer(process, cfg, policy, max_expansions=max_expansions)
    q_entries: dict[tuple[History, Action], ValueInterval] = {}
    v_entries: dict[History, ValueInterval] = {}
    for h in histories_only(histories):
        for a in process.alphabets.actions:
            q_entries[(h, a)] = computer.q_interval(h, a)
        v_entries[h] = computer.v_interval(h)
    return PolicyValues(QTable(q_entries, cfg), VTable(v_entries, cfg))


def context_universe(
    process: OriginalProcess,
    memory: int,
    depth: int,
    behavior: Optional[HistoryPolicy] = None,
    *,
    max_contexts: int = DEFAULT_HISTORY_CAP,
) -> list[tuple[History, float]]:
    """Representative histories for every reachable trailing-``memory`` context.

    For instances whose kernel, policies, and abstraction map all factor
    through the trailing-``memory`` context, suprema and class weights over
    this universe coincide with those over the full depth-``depth``
    enumeration, at a fraction of the cost.  Each context carries its
    aggregate reach mass over depths 0..depth under ``behavior`` (uniform
    when omitted), normalized to sum to one.

    Behavior policies must themselves factor through the context (memory
    bound at most ``memory``) for the masses to be exact.
    """
    if memory < 0:
        raise ProcessError("memory must be non-negative")
    behavior = behavior or HistoryPolicy.uniform(process.alphabets)
    if behavior.memory_bound is None or behavior.memory_bound > memory:
        raise ProcessError("behavior policy must factor through the context")
    reps: dict[Context, History] = {(): EMPTY_HISTORY}
    mass: dict[Context, float] = {(): 1.0}
    level: dict[Context, float] = {(): 1.0}
    for _ in range(depth):
        nxt: dict[Context, float] = {}
        for ctx, p in level.items():
            h = reps[ctx]
            action_dist = behavior.probabilities(h)
            for a in process.alphabets.actions:
                pa = action_dist[a]
                if pa == 0.0:
                    continue
                for (o, r), po in process.step(h, a).items():
                    h2 = h.extend(a, o, r)
                    ctx2 = h2.context(memory)
                    if ctx2 not in reps:
                        if len(reps) >= max_contexts:
                            raise CapExceededError(
                                f"context universe exceeds cap of {max_contexts}")
                        reps[ctx2] = h2
                    nxt[ctx2] = nxt.get(ctx2, 0.0) + p * pa * po
        for ctx, p in nxt.items():
            mass[ctx] = mass.get(ctx, 0.0) + p
        level = nxt
    total = sum(mass.values())
    return [(reps[ctx], mass[ctx] / total) for ctx in reps]
