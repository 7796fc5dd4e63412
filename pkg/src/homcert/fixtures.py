"""Concrete environments and maps: the navigational grid-world with its
diagonal merge, the value-preserving non-Markov modification, the
region-chain families with their closed-form reference solutions, seeded
random instances, and a Q-clustering map builder for property tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .abstraction import AbstractionError, HomomorphismMap
from .dists import Categorical
from .history import (
    Alphabets,
    Context,
    DiscountConfig,
    ExactReward,
    History,
    HistoryPolicy,
    OriginalProcess,
    ProcessError,
    QTable,
    as_reward,
)
from .solver import value_iteration
from .surrogate import SurrogateMdp, make_mdp

Cell = tuple[int, int]


# ---------------------------------------------------------------------------
# reward normalization

@dataclass(frozen=True)
class RewardTransform:
    """Affine map taking raw rewards into [0, 1]: r_norm = scale * r + offset.

    Positive scale keeps every greedy action choice unchanged; the recorded
    transform lets values be reported back in raw units.
    """

    scale: Fraction
    offset: Fraction

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ProcessError("reward transform needs a positive scale")

    @classmethod
    def for_range(cls, lo: Fraction, hi: Fraction) -> "RewardTransform":
        if hi <= lo:
            return cls(scale=Fraction(1), offset=Fraction(0) - lo)
        return cls(scale=1 / (hi - lo), offset=-lo / (hi - lo))

    @classmethod
    def identity(cls) -> "RewardTransform":
        return cls(scale=Fraction(1), offset=Fraction(0))

    def normalize(self, r: Fraction) -> Fraction:
        out = self.scale * r + self.offset
        if not (0 <= out <= 1):
            raise ProcessError(f"reward {r} maps outside [0, 1]")
        return ExactReward(out)

    def original(self, r_norm: Fraction) -> Fraction:
        return ExactReward((r_norm - self.offset) / self.scale)

    def value_to_original(self, v_norm: float, gamma: float) -> float:
        """Undo the transform on an infinite-horizon discounted value."""
        return (v_norm - float(self.offset) / (1.0 - gamma)) / float(self.scale)


# ---------------------------------------------------------------------------
# navigational grid-world

GRID_ACTIONS = ("up", "down", "left", "right")
_MOVES = {"up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}
_MIRROR_ACTION = {"up": "right", "right": "up", "down": "left", "left": "down"}

DEFAULT_BLOCKED = frozenset(
    {(2, 5), (4, 4), (2, 3), (3, 2), (0, 2), (5, 2), (2, 0), (5, 0)})

# Optimal values reported elsewhere for this exact layout, produced with
# undisclosed parameters; kept for side-by-side inspection only, never as an
# expected value.  Cells absent here are blocked.
REFERENCE_GRID_VALUES: dict[Cell, float] = {
    (0, 0): 1.74, (0, 1): 1.94, (0, 3): 2.42, (0, 4): 2.70, (0, 5): 2.42,
    (1, 0): 1.94, (1, 1): 2.17, (1, 2): 2.42, (1, 3): 2.70, (1, 4): 3.01,
    (1, 5): 2.17,
    (2, 1): 2.42, (2, 2): 2.17, (2, 4): 3.35,
    (3, 0): 2.42, (3, 1): 2.70, (3, 3): 3.35, (3, 4): 3.74, (3, 5): 4.16,
    (4, 0): 2.70, (4, 1): 3.01, (4, 2): 3.35, (4, 3): 3.74, (4, 5): 4.64,
    (5, 1): 2.70, (5, 3): 4.16, (5, 4): 4.64, (5, 5): 5.16,
}
REFERENCE_GRID_MISMATCHED: frozenset[Cell] = frozenset({(0, 5), (1, 5), (5, 1)})


@dataclass(frozen=True)
class GridWorldSpec:
    width: int = 6
    height: int = 6
    blocked: frozenset[Cell] = DEFAULT_BLOCKED
    goal: Cell = (5, 5)
    start: Cell = (0, 0)
    r_goal: Fraction = Fraction(1)
    r_step: Fraction = Fraction(-1, 20)
    slip: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "r_goal", as_reward_raw(self.r_goal))
        object.__setattr__(self, "r_step", as_reward_raw(self.r_step))
        if self.goal in self.blocked:
            raise ProcessError("goal cell is blocked")
        if self.start in self.blocked:
            raise ProcessError("start cell is blocked")
        if not (0.0 <= self.slip < 1.0):
            raise ProcessError("slip must lie in [0, 1)")
        for cell in (self.goal, self.start):
            if not self._in_grid(cell):
                raise ProcessError(f"cell {cell} outside the grid")

    def _in_grid(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def free_cells(self) -> tuple[Cell, ...]:
        return tuple(
            (c, r)
            for c in range(self.width)
            for r in range(self.height)
            if (c, r) not in self.blocked
        )

    def move(self, cell: Cell, action: str) -> Cell:
        dc, dr = _MOVES[action]
        target = (cell[0] + dc, cell[1] + dr)
        if not self._in_grid(target) or target in self.blocked:
            return cell
        return target


def as_reward_raw(value: Any) -> Fraction:
    """Rationalize a raw (possibly negative) reward."""
    if isinstance(value, ExactReward):
        return value
    if isinstance(value, (Fraction, int)):
        return ExactReward(value)
    if isinstance(value, float):
        return ExactReward(Fraction(repr(value)))
    if isinstance(value, str):
        return ExactReward(Fraction(value))
    raise ProcessError(f"cannot interpret {value!r} as a rational reward")


StepRule = Any  # (cell, action) -> list of (next_cell, raw_reward, prob)


def _base_step(spec: GridWorldSpec, cell: Cell, action: str) -> list[tuple[Cell, Fraction, float]]:
    # the goal is absorbing and pays its reward on every step taken there,
    # so values decrease strictly with distance from the goal; ordinary
    # moves (including bumps into walls or blocked cells) pay the step reward
    if cell == spec.goal:
        return [(spec.goal, spec.r_goal, 1.0)]
    target = spec.move(cell, action)
    if spec.slip == 0.0 or target == cell:
        return [(target, spec.r_step, 1.0)]
    return [(target, spec.r_step, 1.0 - spec.slip), (cell, spec.r_step, spec.slip)]


@dataclass(frozen=True)
class GridWorld:
    """A grid fixture: process, diagonal merge map, and exact cell model."""

    spec: GridWorldSpec
    process: OriginalProcess
    psi: HomomorphismMap
    transform: RewardTransform
    cell_mdp: SurrogateMdp

    def mirror_pairs(self) -> tuple[tuple[Cell, Cell], ...]:
        """Free off-diagonal cells whose mirror is also free."""
        out = []
        for cell in self.spec.free_cells():
            c, r = cell
            if c < r and (r, c) not in self.spec.blocked:
                out.append(((c, r), (r, c)))
        return tuple(out)

    def cell_of(self, h: History) -> Cell:
        o = h.last_observation()
        return self.spec.start if o is None else o


def _canon(cell: Cell) -> Cell:
    c, r = cell
    return (c, r) if c <= r else (r, c)


def build_gridworld(
    spec: GridWorldSpec = GridWorldSpec(),
    *,
    reward_range: Optional[tuple[Fraction, Fraction]] = None,
    step_rule: Optional[StepRule] = None,
) -> GridWorld:
    """The navigational grid with its diagonal mirror-merge map.

    The observation is the current cell; moves into walls or blocked cells
    stay in place; the goal is absorbing and keeps paying its reward.  Raw
    rewards are affinely normalized into [0, 1] (over ``reward_range`` when
    given, so related worlds can share one scale) and the transform is
    recorded.
    """
    rule = step_rule or (lambda cell, action: _base_step(spec, cell, action))
    raw_rewards = {r for cell in spec.free_cells() for a in GRID_ACTIONS
                   for _, r, _ in rule(cell, a)}
    if reward_range is None:
        lo, hi = min(raw_rewards), max(raw_rewards)
    else:
        lo, hi = reward_range
        if lo > min(raw_rewards) or hi < max(raw_rewards):
            raise ProcessError("reward_range does not cover the raw rewards")
    transform = RewardTransform.for_range(lo, hi)
    reward_set = tuple(sorted({transform.normalize(r) for r in raw_rewards}))
    cells = spec.free_cells()
    alphabets = Alphabets(actions=GRID_ACTIONS, observations=cells, rewards=reward_set)

    def outcomes(cell: Cell, action: str) -> Categorical:
        return Categorical(
            ((nxt, transform.normalize(r)), p) for nxt, r, p in rule(cell, action))

    rows = {}
    for cell in cells:
        for a in GRID_ACTIONS:
            rows[(cell, a)] = outcomes(cell, a)

    def kernel(h: History, a: str) -> Categorical:
        o = h.last_observation()
        return rows[(spec.start if o is None else o, a)]

    process = OriginalProcess(alphabets=alphabets, kernel=kernel,
                              memory_bound=1, name="gridworld")

    states = tuple(sorted({_canon(cell) for cell in cells}))

    def state_fn(h: History) -> Cell:
        o = h.last_observation()
        return _canon(spec.start if o is None else o)

    def action_fn(h: History, a: str) -> str:
        o = h.last_observation()
        cell = spec.start if o is None else o
        c, r = cell
        return a if c <= r else _MIRROR_ACTION[a]

    psi = HomomorphismMap(states=states, abstract_actions=GRID_ACTIONS,
                          state_fn=state_fn, action_fn=action_fn,
                          memory_bound=1, name="diagonal")

    cell_rows = {(cell, a): rows[(cell, a)] for cell in cells for a in GRID_ACTIONS}
    cell_mdp = make_mdp(cells, GRID_ACTIONS, cell_rows, reward_set)
    return GridWorld(spec=spec, process=process, psi=psi,
                     transform=transform, cell_mdp=cell_mdp)


@dataclass(frozen=True)
class ModifiedGridWorld:
    """Base and swapped worlds rebuilt on one shared reward scale.

    At ``swap_cell`` the up/down transition targets are exchanged and the
    rewards compensated by the solved neighbor-value difference, so optimal
    action-values are preserved while the one-step kernel changes maximally.
    """

    base: GridWorld
    modified: GridWorld
    swap_cell: Cell
    mirror_cell: Cell
    delta_raw: Fraction
    r_up: Fraction
    r_down: Fraction


def build_modified_gridworld(
    spec: GridWorldSpec = GridWorldSpec(),
    cfg: DiscountConfig = DiscountConfig(gamma=0.9, horizon=40),
    swap_cell: Cell = (4, 2),
    tol: float = 1e-12,
) -> ModifiedGridWorld:
    up_cell = spec.move(swap_cell, "up")
    down_cell = spec.move(swap_cell, "down")
    if up_cell == swap_cell or down_cell == swap_cell:
        raise ProcessError(f"swap cell {swap_cell} needs free up and down neighbors")
    plain = build_gridworld(spec)
    solved = value_iteration(plain.cell_mdp, cfg, tol)
    gamma = as_reward_raw(cfg.gamma)
    delta_norm = solved.v[up_cell] - solved.v[down_cell]
    delta_raw = as_reward_raw(delta_norm) / plain.transform.scale
    r_up = spec.r_step + gamma * delta_raw
    r_down = spec.r_step - gamma * delta_raw
    lo = min(spec.r_step, spec.r_goal, r_up, r_down)
    hi = max(spec.r_step, spec.r_goal, r_up, r_down)

    def swapped(cell: Cell, action: str) -> list[tuple[Cell, Fraction, float]]:
        if cell == swap_cell and action in ("up", "down"):
            if action == "up":
                return [(down_cell, r_up, 1.0)]
            return [(up_cell, r_down, 1.0)]
        return _base_step(spec, cell, action)

    base = build_gridworld(spec, reward_range=(lo, hi))
    modified = build_gridworld(spec, reward_range=(lo, hi), step_rule=swapped)
    modified = GridWorld(spec=spec,
                         process=OriginalProcess(
                             alphabets=modified.process.alphabets,
                             kernel=modified.process.kernel,
                             memory_bound=1, name="gridworld-modified"),
                         psi=modified.psi, transform=modified.transform,
                         cell_mdp=modified.cell_mdp)
    return ModifiedGridWorld(base=base, modified=modified, swap_cell=swap_cell,
                             mirror_cell=_canon(swap_cell), delta_raw=delta_raw,
                             r_up=r_up, r_down=r_down)


def grid_values(world: GridWorld, cfg: DiscountConfig, tol: float = 1e-12,
                raw_units: bool = True) -> dict[Cell, float]:
    """Exact per-cell optimal values from the cell model."""
    solved = value_iteration(world.cell_mdp, cfg, tol)
    if not raw_units:
        return dict(solved.v)
    return {cell: world.transform.value_to_original(v, cfg.gamma)
            for cell, v in solved.v.items()}


# ---------------------------------------------------------------------------
# region chains

_OBS_BLOCK = {1: "X", 2: "X", 3: "Y", 4: "Y"}
_ACT_BLOCK = {1: "alpha", 2: "alpha", 3: "beta", 4: "beta"}
_CHAIN_OBS = (1, 2, 3, 4)
_CHAIN_ACTIONS = (1, 2, 3, 4)
_CHAIN_START_OBS = 4

# per-case region layout: region -> (observation set, action block)
_REGION_LAYOUT = {
    1: {"R1": ((3, 4), "alpha"), "R2": ((3, 4), "beta"),
        "R3": ((1, 2), "beta"), "R4a": ((2,), "alpha"), "R4b": ((1,), "alpha")},
    2: {"R1": ((3, 4), "alpha"), "R2": ((3, 4), "beta"),
        "R3a": ((2,), "beta"), "R3b": ((1,), "beta"),
        "R4a": ((2,), "alpha"), "R4b": ((1,), "alpha")},
    3: {"R1": ((3, 4), "alpha"), "R2a": ((4,), "beta"), "R2b": ((3,), "beta"),
        "R3a": ((2,), "beta"), "R3b": ((1,), "beta"),
        "R4a": ((2,), "alpha"), "R4b": ((1,), "alpha")},
}


@dataclass(frozen=True)
class RegionChainSpec:
    case: int
    regions: tuple[str, ...]
    p_matrix: tuple[tuple[float, ...], ...]
    rewards: tuple[Fraction, ...]
    region_to_class: Mapping[str, tuple[str, str]]

    def reward_of(self, region: str) -> Fraction:
        return self.rewards[self.regions.index(region)]


@dataclass(frozen=True)
class RegionChain:
    """A region chain realized as a history process plus its class map.

    The printed region matrix folds the policy into the dynamics; the
    realization factorizes it into an observation kernel and a (history
    dependent, memory-2) policy whose joint region dynamics reproduce the
    matrix exactly.
    """

    spec: RegionChainSpec
    process: OriginalProcess
    policy: HistoryPolicy
    psi: HomomorphismMap
    transform: RewardTransform
    reference_q: tuple[float, ...]

    def region_of_pair(self, obs: int, action: int) -> str:
        layout = _REGION_LAYOUT[self.spec.case]
        for region, (obs_set, block) in layout.items():
            if obs in obs_set and _ACT_BLOCK[action] == block:
                return region
        raise ProcessError(f"no region for pair ({obs}, {action})")

    def region_of_history(self, h: History) -> str:
        """Region of the last (observation, action) pair; R1-entry for short h."""
        if len(h) == 0:
            raise ProcessError("the empty history has no committed pair")
        prev_obs = _CHAIN_START_OBS if len(h) == 1 else h.triples[-2][1]
        return self.region_of_pair(prev_obs, h.triples[-1][0])

    def realized_region_matrix(self) -> np.ndarray:
        """Joint region-to-region dynamics of (process, policy).

        Reproduces the printed matrix row by row: kernel and policy only
        condition on (previous observation, action, current observation),
        so one probe history per region suffices.
        """
        regions = self.spec.regions
        n = len(regions)
        out = np.zeros((n, n))
        layout = _REGION_LAYOUT[self.spec.case]
        r0 = self.process.alphabets.rewards[0]
        for i, region in enumerate(regions):
            obs_set, block = layout[region]
            action = 1 if block == "alpha" else 3
            probe = History(((1, obs_set[0], r0),))
            for (o2, r2), p_obs in self.process.step(probe, action).items():
                h2 = probe.extend(action, o2, r2)
                for a2, p_act in self.policy.probabilities(h2).items():
                    j = regions.index(self.region_of_pair(o2, a2))
                    out[i, j] += p_obs * p_act
        return out


def _chain_matrices(case: int, gamma: Fraction, eps: Fraction, eps_prime: float):
    ep = eps_prime
    if case == 1:
        regions = ("R1", "R2", "R3", "R4a", "R4b")
        p = ((0, 1, 0, 0, 0),
             (0, 0, 1, 0, 0),
             (0, 0, 0, 0.5, 0.5),
             (1, 0, 0, 0, 0),
             (0.5, 0, 0, 0.25, 0.25))
        rewards = (as_reward(0), as_reward(0), as_reward(0), gamma, as_reward(0))
    elif case == 2:
        regions = ("R1", "R2", "R3a", "R3b", "R4a", "R4b")
        p = ((0, 1, 0, 0, 0, 0),
             (0, 0, 0.5, 0.5, 0, 0),
             (0, 0, 0, 0, 0.5, 0.5),
             (0, 0, 0, 0, 0.5, 0.5),
             (1, 0, 0, 0, 0, 0),
             (0.5, 0, 0, 0, 0.25, 0.25))
        rewards = (as_reward(0), as_reward(0), as_reward(0), eps, gamma, as_reward(0))
    elif case == 3:
        regions = ("R1", "R2a", "R2b", "R3a", "R3b", "R4a", "R4b")
        p = ((ep, 0.5, 0.5 - ep, 0, 0, 0, 0),
             (0, 0, 0, 0.5, 0.5, 0, 0),
             (0, 0, 0, 0.5, 0.5, 0, 0),
             (0, 0, 0, 0, 0, 0.5, 0.5),
             (0, 0, 0, 0, 0, 0.5, 0.5),
             (1, 0, 0, 0, 0, 0, 0),
             (0.5, 0, 0, 0, 0, 0.25, 0.25))
        rewards = (as_reward(0), as_reward(0), as_reward(0), as_reward(0), eps,
                   gamma, as_reward(0))
    else:
        raise ProcessError(f"region chain case must be 1, 2, or 3, got {case}")
    return regions, p, rewards


def chain_reference_q(case: int, gamma: float, eps: float = 0.0,
                      eps_prime: float = 0.0) -> tuple[float, ...]:
    """Closed-form candidate solution associated with each chain family.

    The solver's comparison report measures these entrywise against the
    exact linear solve; agreement is reported, never asserted (the rows for
    the two final regions are known not to satisfy the printed system).
    """
    g = gamma
    if case == 1:
        c = 2.0 / (1.0 - g ** 3)
        return (c - 2.0, g * g * c, g * c, c, c)
    if case == 2:
        c = (g * g * eps + 4.0) / (2.0 * (1.0 - g ** 3))
        return (c - 2.0, g * eps / 2.0 + g * g * c, g * c, g * c + eps, c, c)
    if case == 3:
        growth = (1.0 - eps_prime) / (1.0 - g * eps_prime)
        c = (4.0 + g * g * eps * growth) / (2.0 * (1.0 - g ** 3 * growth))
        return (g * g * growth * (eps / 2.0 + g * c),
                g * eps / 2.0 + g * g * c, g * eps / 2.0 + g * g * c,
                g * c, g * c + eps, c, c)
    raise ProcessError(f"region chain case must be 1, 2, or 3, got {case}")


def _chain_allocations(case: int, regions: tuple[str, ...], p_row: Sequence[float],
                       source: str) -> dict[int, dict[str, float]]:
    """Split one region row into per-observation action-block masses.

    Mass onto a region spreads uniformly over its observation set, except
    that in case 3 the self-loop mass of the first region goes entirely to
    observation 3 (that is what realizes the printed policy split between
    the two halves of the second region).
    """
    layout = _REGION_LAYOUT[case]
    alloc: dict[int, dict[str, float]] = {}
    for j, target in enumerate(regions):
        mass = p_row[j]
        if mass == 0.0:
            continue
        obs_set, block = layout[target]
        if case == 3 and source == "R1" and target == "R1":
            obs_weights = {3: mass}
        else:
            obs_weights = {o: mass / len(obs_set) for o in obs_set}
        for o, w in obs_weights.items():
            alloc.setdefault(o, {"alpha": 0.0, "beta": 0.0})
            alloc[o][block] += w
    return alloc


def build_region_chain(
    case: int,
    gamma: Any,
    eps: Any = 0,
    eps_prime: Any = 0,
) -> RegionChain:
    """Construct one of the three region-chain instances.

    ``gamma`` doubles as a reward value in the printed reward vectors and
    must be rational-convertible; ``eps`` is the off-reward of the split
    third region (cases 2-3) and ``eps_prime`` the policy split (case 3).
    """
    gamma_f = as_reward(gamma)
    eps_f = as_reward(eps)
    eps_p = float(eps_prime)
    if not (0.0 <= eps_p <= 1.0):
        raise ProcessError("eps_prime must lie in [0, 1]")
    regions, p, rewards = _chain_matrices(case, gamma_f, eps_f, eps_p)
    layout = _REGION_LAYOUT[case]

    reward_set = tuple(sorted(set(rewards)))
    alphabets = Alphabets(actions=_CHAIN_ACTIONS, observations=_CHAIN_OBS,
                          rewards=reward_set)

    region_index = {r: i for i, r in enumerate(regions)}
    allocations = {r: _chain_allocations(case, regions, p[region_index[r]], r)
                   for r in regions}

    def region_of_pair(obs: int, action: int) -> str:
        block = _ACT_BLOCK[action]
        for region, (obs_set, rblock) in layout.items():
            if obs in obs_set and rblock == block:
                return region
        raise ProcessError(f"no region for pair ({obs}, {action})")

    def kernel(h: History, a: int) -> Categorical:
        obs = h.last_observation()
        obs = _CHAIN_START_OBS if obs is None else obs
        region = region_of_pair(obs, a)
        reward = rewards[region_index[region]]
        alloc = allocations[region]
        return Categorical(
            ((o2, reward), sum(blocks.values()))
            for o2, blocks in sorted(alloc.items()))

    process = OriginalProcess(alphabets=alphabets, kernel=kernel,
                              memory_bound=1, name=f"region-chain-{case}")

    alpha_actions = tuple(a for a in _CHAIN_ACTIONS if _ACT_BLOCK[a] == "alpha")
    beta_actions = tuple(a for a in _CHAIN_ACTIONS if _ACT_BLOCK[a] == "beta")

    def policy_rule(h: History) -> Categorical:
        if len(h) == 0:
            return Categorical.from_weights((a, 1.0) for a in alpha_actions)
        prev_obs = _CHAIN_START_OBS if len(h) == 1 else h.triples[-2][1]
        last_action, obs, _ = h.triples[-1]
        region = region_of_pair(prev_obs, last_action)
        blocks = allocations[region].get(obs)
        if blocks is None:
            # observation unreachable from this region; any fixed row works
            return Categorical.from_weights((a, 1.0) for a in _CHAIN_ACTIONS)
        total = blocks["alpha"] + blocks["beta"]
        weights = [(a, blocks["alpha"] / total / 2.0) for a in alpha_actions]
        weights += [(a, blocks["beta"] / total / 2.0) for a in beta_actions]
        return Categorical.from_weights(weights)

    policy = HistoryPolicy(rule=policy_rule, memory_bound=2, name="chain-policy")

    def state_fn(h: History) -> str:
        obs = h.last_observation()
        return _OBS_BLOCK[_CHAIN_START_OBS if obs is None else obs]

    def action_fn(h: History, a: int) -> str:
        return _ACT_BLOCK[a]

    psi = HomomorphismMap(states=("X", "Y"), abstract_actions=("alpha", "beta"),
                          state_fn=state_fn, action_fn=action_fn,
                          memory_bound=1, name=f"region-classes-{case}")

    spec = RegionChainSpec(case=case, regions=regions,
                           p_matrix=tuple(tuple(float(x) for x in row) for row in p),
                           rewards=rewards,
                           region_to_class={
                               r: (("X" if layout[r][0][0] in (1, 2) else "Y"),
                                   layout[r][1])
                               for r in regions})
    reference = chain_reference_q(case, float(gamma_f), float(eps_f), eps_p)
    return RegionChain(spec=spec, process=process, policy=policy, psi=psi,
                       transform=RewardTransform.identity(),
                       reference_q=reference)


# ---------------------------------------------------------------------------
# seeded random instances

def _reward_values(n_rewards: int) -> tuple[Fraction, ...]:
    if n_rewards == 1:
        return (as_reward(1),)
    return tuple(as_reward(Fraction(i, n_rewards - 1)) for i in range(n_rewards))


def _all_contexts(alphabets: Alphabets, memory: int) -> list[Context]:
    triples = [(a, o, r) for a in alphabets.actions for o in alphabets.observations
               for r in alphabets.rewards]
    out: list[Context] = []
    for length in range(memory + 1):
        out.extend(itertools.product(triples, repeat=length))
    return out


def random_process(
    seed: int,
    n_obs: int = 3,
    n_actions: int = 3,
    n_rewards: int = 2,
    memory: int = 1,
) -> tuple[OriginalProcess, HistoryPolicy]:
    """Seeded dense random kernel and policy with the given memory bound.

    Rows are Dirichlet(1) draws from a fixed-algorithm PRNG, so the same
    seed reproduces the same process bit for bit.
    """
    rng = np.random.default_rng(seed)
    alphabets = Alphabets(actions=tuple(range(n_actions)),
                          observations=tuple(range(n_obs)),
                          rewards=_reward_values(n_rewards))
    contexts = _all_contexts(alphabets, memory)
    outcomes = [(o, r) for o in alphabets.observations for r in alphabets.rewards]
    kernel_table = {}
    for ctx in contexts:
        for a in alphabets.actions:
            probs = rng.dirichlet(np.ones(len(outcomes)))
            kernel_table[(ctx, a)] = Categorical(zip(outcomes, probs))
    process = OriginalProcess.from_context_table(
        alphabets, kernel_table, memory_bound=memory, name=f"random-{seed}")
    policy_table = {}
    for ctx in contexts:
        probs = rng.dirichlet(np.ones(n_actions))
        policy_table[ctx] = Categorical(zip(alphabets.actions, probs))
    policy = HistoryPolicy.from_context_table(policy_table, memory_bound=memory,
                                              name=f"random-policy-{seed}")
    return process, policy


def random_mdp(
    seed: int,
    n_states: int = 5,
    n_actions: int = 3,
    n_rewards: int = 3,
) -> SurrogateMdp:
    """Seeded dense random finite MDP (solver and action-gap exercises)."""
    rng = np.random.default_rng(seed)
    states = tuple(range(n_states))
    actions = tuple(range(n_actions))
    rewards = _reward_values(n_rewards)
    outcomes = [(s, r) for s in states for r in rewards]
    kernel = {}
    for s in states:
        for b in actions:
            probs = rng.dirichlet(np.ones(len(outcomes)))
            kernel[(s, b)] = Categorical(zip(outcomes, probs))
    return SurrogateMdp(states=states, actions=actions, kernel=kernel,
                        rewards=rewards)


@dataclass(frozen=True)
class MdpHomomorphismFixture:
    """A k=1 process built by blowing up a finite MDP with duplicate
    observations and actions; the bisimulation-respecting map collapses the
    copies back, so the induced abstract process is exactly the MDP."""

    process: OriginalProcess
    psi: HomomorphismMap
    reference_mdp: SurrogateMdp
    state_policy: HistoryPolicy  # random state-based policy (class-uniform)


def random_mdp_homomorphism(
    seed: int,
    n_states: int = 3,
    n_abstract_actions: int = 2,
    n_rewards: int = 2,
    copies: int = 2,
) -> MdpHomomorphismFixture:
    rng = np.random.default_rng(seed)
    abs_states = tuple(f"s{i}" for i in range(n_states))
    abs_actions = tuple(f"b{i}" for i in range(n_abstract_actions))
    rewards = _reward_values(n_rewards)
    abs_outcomes = [(s, r) for s in abs_states for r in rewards]
    abs_kernel = {}
    for s in abs_states:
        for b in abs_actions:
            probs = rng.dirichlet(np.ones(len(abs_outcomes)))
            abs_kernel[(s, b)] = Categorical(zip(abs_outcomes, probs))
    reference = SurrogateMdp(states=abs_states, actions=abs_actions,
                             kernel=abs_kernel, rewards=rewards)

    observations = tuple((s, i) for s in abs_states for i in range(copies))
    actions = tuple((b, j) for b in abs_actions for j in range(copies))
    alphabets = Alphabets(actions=actions, observations=observations,
                          rewards=rewards)

    def current_state(h: History) -> str:
        o = h.last_observation()
        return abs_states[0] if o is None else o[0]

    def kernel(h: History, a: tuple[str, int]) -> Categorical:
        s = current_state(h)
        row = abs_kernel[(s, a[0])]
        return Categorical(
            (((s2, i), r), p / copies)
            for (s2, r), p in row.items() for i in range(copies))

    process = OriginalProcess(alphabets=alphabets, kernel=kernel,
                              memory_bound=1, name=f"mdp-blowup-{seed}")

    psi = HomomorphismMap(states=abs_states, abstract_actions=abs_actions,
                          state_fn=current_state,
                          action_fn=lambda h, a: a[0],
                          memory_bound=1, name="collapse-copies")

    policy_rows = {}
    for s in abs_states:
        probs = rng.dirichlet(np.ones(len(actions)))
        policy_rows[s] = Categorical(zip(actions, probs))

    state_policy = HistoryPolicy(
        rule=lambda h: policy_rows[current_state(h)],
        memory_bound=1, name="state-based")
    return MdpHomomorphismFixture(process=process, psi=psi,
                                  reference_mdp=reference,
                                  state_policy=state_policy)


# ---------------------------------------------------------------------------
# context MDP (exact finite model of a memory-bounded process)

def context_closure(process: OriginalProcess, *, max_contexts: int = 100_000
                    ) -> dict[Context, History]:
    """Representative history for every reachable trailing-k context."""
    k = process.memory_bound
    if k is None:
        raise ProcessError("context closure requires a memory-bounded process")
    reps: dict[Context, History] = {(): History()}
    frontier = [History()]
    while frontier:
        nxt = []
        for h in frontier:
            for a in process.alphabets.actions:
                for (o, r), _ in process.step(h, a).items():
                    h2 = h.extend(a, o, r)
                    ctx = h2.context(k)
                    if ctx not in reps:
                        if len(reps) >= max_contexts:
                            raise ProcessError("context closure exceeds cap")
                        reps[ctx] = h2
                        nxt.append(h2)
        frontier = nxt
    return reps


def context_mdp(process: OriginalProcess) -> SurrogateMdp:
    """The finite MDP over reachable contexts of a memory-bounded process.

    Independent finite model used as an oracle against history-side values:
    for a process with memory bound k, optimal values agree with this MDP's
    on every reachable pair, up to the truncation tail.
    """
    k = process.memory_bound
    reps = context_closure(process)
    kernel = {}
    for ctx, h in reps.items():
        for a in process.alphabets.actions:
            row = []
            for (o, r), p in process.step(h, a).items():
                ctx2 = h.extend(a, o, r).context(k)
                row.append(((ctx2, r), p))
            kernel[(ctx, a)] = Categorical(row)
    return SurrogateMdp(states=tuple(reps), actions=process.alphabets.actions,
                        kernel=kernel, rewards=process.alphabets.rewards)


# ---------------------------------------------------------------------------
# Q-clustering map builder

def build_q_uniform_map(
    process: OriginalProcess,
    qtable: QTable,
    eps_target: float,
    cfg: DiscountConfig,
    universe: Sequence[tuple[History, float]],
) -> HomomorphismMap:
    """Bucket (context, action) pairs by optimal-value midpoint.

    Greedy one-dimensional bucketing at width ``eps_target`` (exact level
    sets when the target is zero), intersected with the state partition by
    bucket signature across actions, so the abstract state stays a function
    of the history alone.  The measured action-value spread of the result
    is below ``eps_target`` plus the truncation tail.
    """
    k = process.memory_bound
    if k is None:
        raise AbstractionError("the bucketing map builder needs a memory bound")
    actions = process.alphabets.actions
    reps: dict[Context, History] = {}
    for h, _ in universe:
        reps.setdefault(h.context(k), h)
    mids = {(ctx, a): qtable.mid(h, a) for ctx, h in reps.items() for a in actions}
    if eps_target < 0:
        raise AbstractionError("eps_target must be non-negative")
    if eps_target == 0.0:
        def bucket(x: float):
            return x
    else:
        qmin = min(mids.values())

        def bucket(x: float):
            return int((x - qmin) // eps_target)

    state_table = {ctx: tuple(bucket(mids[(ctx, a)]) for a in actions)
                   for ctx in reps}
    action_table = {(ctx, a): bucket(mids[(ctx, a)])
                    for ctx in reps for a in actions}
    states = tuple(sorted(set(state_table.values())))
    abstract_actions = tuple(sorted(set(action_table.values())))
    return HomomorphismMap.from_context_tables(
        state_table, action_table, memory_bound=k,
        states=states, abstract_actions=abstract_actions, name="q-uniform")


# ---------------------------------------------------------------------------
# process serialization (round-trip support for the experiment documents)

def process_to_table(process: OriginalProcess) -> dict:
    """Dump a memory-bounded process to a JSON-friendly table."""
    reps = context_closure(process)
    alphabets = process.alphabets
    entries = []
    for ctx, h in reps.items():
        for a in alphabets.actions:
            row = [[[o, str(r)], p] for (o, r), p in process.step(h, a).items()]
            entries.append({
                "context": [[t[0], t[1], str(t[2])] for t in ctx],
                "action": a,
                "row": row,
            })
    return {
        "actions": list(alphabets.actions),
        "observations": list(alphabets.observations),
        "rewards": [str(r) for r in alphabets.rewards],
        "memory_bound": process.memory_bound,
        "name": process.name,
        "kernel": entries,
    }


def process_from_table(doc: Mapping) -> OriginalProcess:
    """Rebuild a process from its serialized table."""
    def label(x):
        return tuple(x) if isinstance(x, list) else x

    alphabets = Alphabets(
        actions=tuple(label(a) for a in doc["actions"]),
        observations=tuple(label(o) for o in doc["observations"]),
        rewards=tuple(Fraction(r) for r in doc["rewards"]),
    )
    table = {}
    for entry in doc["kernel"]:
        ctx = tuple((label(t[0]), label(t[1]), Fraction(t[2]))
                    for t in entry["context"])
        row = Categorical(
            ((label(o), Fraction(r)), p) for (o, r), p in entry["row"])
        table[(ctx, label(entry["action"]))] = row
    return OriginalProcess.from_context_table(
        alphabets, table, memory_bound=int(doc["memory_bound"]),
        name=doc.get("name", ""))


def map_to_table(psi: HomomorphismMap, process: OriginalProcess) -> dict:
    """Dump a context-keyed map to a JSON-friendly table."""
    if psi.memory_bound is None:
        raise AbstractionError("only context-keyed maps serialize")
    reps = context_closure(process)
    state_entries = []
    action_entries = []
    for ctx, h in reps.items():
        rendered = [[t[0], t[1], str(t[2])] for t in ctx]
        state_entries.append([rendered, psi.state_of(h)])
        for a in process.alphabets.actions:
            action_entries.append([rendered, a, psi.action_of(h, a)])
    return {
        "type": "context",
        "memory_bound": psi.memory_bound,
        "states": list(psi.states),
        "abstract_actions": list(psi.abstract_actions),
        "state_map": state_entries,
        "action_map": action_entries,
        "name": psi.name,
    }


def map_from_table(doc: Mapping, process: OriginalProcess) -> HomomorphismMap:
    """Rebuild a map from a serialized table.

    Two forms are accepted: ``context`` (explicit trailing-k context keys,
    the fully tabular form) and ``last-observation`` (keyed by the last
    observation alone, with a designated start state for the empty history).
    """
    def label(x):
        return tuple(label(y) for y in x) if isinstance(x, list) else x

    kind = doc.get("type", "context")
    if kind == "context":
        memory = int(doc["memory_bound"])

        def parse_ctx(entry):
            return tuple((label(t[0]), label(t[1]), Fraction(t[2]))
                         for t in entry)

        state_table = {parse_ctx(ctx): label(s) for ctx, s in doc["state_map"]}
        action_table = {(parse_ctx(ctx), label(a)): label(b)
                        for ctx, a, b in doc["action_map"]}
        states = tuple(label(s) for s in doc["states"]) if "states" in doc else None
        abstract = (tuple(label(b) for b in doc["abstract_actions"])
                    if "abstract_actions" in doc else None)
        return HomomorphismMap.from_context_tables(
            state_table, action_table, memory_bound=memory, states=states,
            abstract_actions=abstract, name=doc.get("name", "inline"))
    if kind == "last-observation":
        state_map = {label(o): label(s) for o, s in doc["state_map"]}
        action_map = {(label(o), label(a)): label(b)
                      for o, a, b in doc["action_map"]}
        start_obs = label(doc["start_observation"])  # the empty history's cell
        states = tuple(dict.fromkeys(state_map.values()))
        abstract = tuple(dict.fromkeys(action_map.values()))

        def current(h: History):
            o = h.last_observation()
            return start_obs if o is None else o

        return HomomorphismMap(
            states=states, abstract_actions=abstract,
            state_fn=lambda h: state_map[current(h)],
            action_fn=lambda h, a: action_map[(current(h), a)],
            memory_bound=1, name=doc.get("name", "inline"))
    raise AbstractionError(f"unknown map table type {kind!r}")


def process_signature(process: OriginalProcess) -> tuple:
    """Canonical fingerprint of a memory-bounded process (for equality tests)."""
    reps = context_closure(process)
    out = []
    for ctx in sorted(reps, key=repr):
        h = reps[ctx]
        for a in process.alphabets.actions:
            row = tuple(sorted(((repr(o), str(r), round(p, 15))
                                for (o, r), p in process.step(h, a).items())))
            out.append((repr(ctx), repr(a), row))
    return tuple(out)
