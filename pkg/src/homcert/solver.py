"""Exact solvers for finite MDPs: value iteration, policy evaluation, and
direct linear solves for region-uniform Bellman systems.

MDPs arrive as sparse row tables (one distribution over (next state, reward)
per available state-action cell), so instances with many states but few
transitions per cell stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .dists import Categorical
from .history import DiscountConfig, ProcessError
from .surrogate import SurrogateMdp

MAX_SWEEPS = 1_000_000
DENSE_SOLVE_LIMIT = 10_000


class SolverError(RuntimeError):
    """Iteration cap reached or inconsistent solver inputs."""


@dataclass(frozen=True)
class AbstractPolicy:
    """Policy over abstract states: state -> distribution over abstract actions."""

    rules: Mapping[object, Categorical]
    deterministic: bool = False

    def __post_init__(self) -> None:
        if self.deterministic:
            for s, dist in self.rules.items():
                if len(dist) != 1:
                    raise ProcessError(f"policy row at {s!r} is not a point mass")

    def probabilities(self, s: object) -> Categorical:
        return self.rules[s]

    def action(self, s: object) -> object:
        if not self.deterministic:
            raise ProcessError("action() requires a deterministic policy")
        return self.rules[s].support()[0]

    @classmethod
    def from_actions(cls, choices: Mapping[object, object]) -> "AbstractPolicy":
        return cls({s: Categorical.point(b) for s, b in choices.items()},
                   deterministic=True)

    @classmethod
    def uniform(cls, mdp: SurrogateMdp) -> "AbstractPolicy":
        rules = {}
        for s in mdp.states:
            rules[s] = Categorical.from_weights((b, 1.0) for b in mdp.available(s))
        return cls(rules)


@dataclass
class SolveResult:
    q: dict[tuple[object, object], float]
    v: dict[object, float]
    policy: AbstractPolicy
    residual: float
    iterations: int


class _FlatMdp:
    """Flattened row arrays for vectorized sweeps.

    Cells are ordered by (state index, action index); each carries its
    expected reward and transition weights onto row-states.  Mass onto
    dangling states (states without rows) contributes value zero.
    """

    def __init__(self, mdp: SurrogateMdp):
        self.mdp = mdp
        sidx = {s: i for i, s in enumerate(mdp.states)}
        bidx = {b: i for i, b in enumerate(mdp.actions)}
        self.cells = sorted(mdp.kernel, key=lambda sb: (sidx[sb[0]], bidx[sb[1]]))
        n_cells = len(self.cells)
        rewards = np.empty(n_cells)
        row_ids: list[int] = []
        cols: list[int] = []
        data: list[float] = []
        for i, sb in enumerate(self.cells):
            row = mdp.kernel[sb]
            rewards[i] = sum(p * float(r) for (_, r), p in row.items())
            probs: dict[int, float] = {}
            for (s2, _), p in row.items():
                j = sidx.get(s2)
                if j is not None:
                    probs[j] = probs.get(j, 0.0) + p
            for j in sorted(probs):
                row_ids.append(i)
                cols.append(j)
                data.append(probs[j])
        self.n_cells = n_cells
        self.rewards = rewards
        self.row_ids = np.asarray(row_ids, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.data = np.asarray(data)
        self.cell_state = np.asarray([sidx[s] for s, _ in self.cells], dtype=np.int64)
        starts = [0] + [i for i in range(1, n_cells)
                        if self.cell_state[i] != self.cell_state[i - 1]]
        self.state_starts = np.asarray(starts, dtype=np.int64)
        self.group_state = self.cell_state[self.state_starts]
        if len(self.group_state) != len(mdp.states):
            raise SolverError("every state needs at least one available action")

    def q_backup(self, v: np.ndarray, gamma: float) -> np.ndarray:
        future = np.bincount(self.row_ids, weights=self.data * v[self.cols],
                             minlength=self.n_cells)
        return self.rewards + gamma * future

    def greedy_v(self, q: np.ndarray) -> np.ndarray:
        maxima = np.maximum.reduceat(q, self.state_starts)
        v = np.empty(len(self.group_state))
        v[self.group_state] = maxima
        return v

    def policy_v(self, q: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell_state, weights=weights * q,
                           minlength=len(self.group_state))

    def policy_weights(self, policy: AbstractPolicy) -> np.ndarray:
        w = np.empty(self.n_cells)
        for i, (s, b) in enumerate(self.cells):
            w[i] = policy.probabilities(s)[b]
        return w


def _sweep_threshold(gamma: float, tol: float) -> float:
    # change below tol*(1-gamma)/(2*gamma) puts the iterate within tol/2
    # of the fixed point (standard contraction bound)
    return tol if gamma == 0.0 else tol * (1.0 - gamma) / (2.0 * gamma)


def value_iteration(
    mdp: SurrogateMdp,
    cfg: DiscountConfig,
    tol: float = 1e-10,
) -> SolveResult:
    """Optimal values by contraction sweeps; greedy ties break by action order."""
    if tol <= 0:
        raise SolverError("tol must be positive")
    flat = _FlatMdp(mdp)
    gamma = cfg.gamma
    threshold = _sweep_threshold(gamma, tol)
    v = np.zeros(len(mdp.states))
    iterations = 0
    while True:
        iterations += 1
        if iterations > MAX_SWEEPS:
            raise SolverError("value iteration exceeded the sweep cap")
        v_new = flat.greedy_v(flat.q_backup(v, gamma))
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        if change <= threshold or gamma == 0.0:
            break
    q = flat.q_backup(v, gamma)
    residual = float(np.max(np.abs(flat.greedy_v(q) - v)))

    q_map: dict[tuple[object, object], float] = {}
    choices: dict[object, object] = {}
    for i, (s, b) in enumerate(flat.cells):
        q_map[(s, b)] = float(q[i])
        if s not in choices or q_map[(s, b)] > q_map[(s, choices[s])] + 1e-15:
            choices[s] = b
    v_map = {s: float(v[j]) for j, s in enumerate(mdp.states)}
    return SolveResult(q=q_map, v=v_map, policy=AbstractPolicy.from_actions(choices),
                       residual=residual, iterations=iterations)


def policy_evaluation(
    mdp: SurrogateMdp,
    policy: AbstractPolicy,
    cfg: DiscountConfig,
    tol: float = 1e-10,
) -> SolveResult:
    """Evaluate an abstract policy exactly.

    Direct dense linear solve when |S| * |B| is small (the system is
    strictly diagonally dominant for gamma < 1, never singular); contraction
    sweeps otherwise.
    """
    gamma = cfg.gamma
    states = mdp.states
    sidx = {s: i for i, s in enumerate(states)}
    n = len(states)
    for s in states:
        avail = set(mdp.available(s))
        for b, p in policy.probabilities(s).items():
            if p > 0.0 and b not in avail:
                raise SolverError(f"policy uses unavailable action {b!r} at {s!r}")

    flat = _FlatMdp(mdp)
    weights = flat.policy_weights(policy)

    if n * len(mdp.actions) <= DENSE_SOLVE_LIMIT:
        p_pi = np.zeros((n, n))
        r_pi = np.zeros(n)
        for i in range(flat.n_cells):
            w = weights[i]
            if w == 0.0:
                continue
            r_pi[flat.cell_state[i]] += w * flat.rewards[i]
        entry_w = weights[flat.row_ids]
        np.add.at(p_pi, (flat.cell_state[flat.row_ids], flat.cols),
                  entry_w * flat.data)
        v = np.linalg.solve(np.eye(n) - gamma * p_pi, r_pi)
        iterations = 0
    else:
        v = np.zeros(n)
        threshold = _sweep_threshold(gamma, tol)
        iterations = 0
        while True:
            iterations += 1
            if iterations > MAX_SWEEPS:
                raise SolverError("policy evaluation exceeded the sweep cap")
            v_new = flat.policy_v(flat.q_backup(v, gamma), weights)
            change = float(np.max(np.abs(v_new - v)))
            v = v_new
            if change <= threshold or gamma == 0.0:
                break

    q = flat.q_backup(v, gamma)
    residual = float(np.max(np.abs(flat.policy_v(q, weights) - v)))
    q_map = {sb: float(q[i]) for i, sb in enumerate(flat.cells)}
    v_map = {s: float(v[sidx[s]]) for s in states}
    return SolveResult(q=q_map, v=v_map, policy=policy, residual=residual,
                       iterations=iterations)


@dataclass
class RegionalSolveResult:
    q: np.ndarray
    residual: float
    reference: Optional[np.ndarray] = None
    deltas: Optional[np.ndarray] = None
    reference_equation_residuals: Optional[np.ndarray] = None


def solve_regional_system(
    p_matrix: Sequence[Sequence[float]],
    rewards: Sequence[float],
    gamma: float,
    reference_q: Optional[Sequence[float]] = None,
) -> RegionalSolveResult:
    """Solve ``Q = r + gamma * P Q`` exactly for a row-stochastic P.

    When ``reference_q`` is supplied (a closed-form candidate solution),
    entrywise deltas against the exact solve are reported; agreement is
    never asserted here.
    """
    p = np.asarray(p_matrix, dtype=float)
    r = np.asarray(rewards, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise SolverError("P must be square")
    if r.shape != (p.shape[0],):
        raise SolverError("reward vector length must match P")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
        raise SolverError("P rows must sum to one")
    if not (0.0 <= gamma < 1.0):
        raise SolverError("gamma must lie in [0, 1)")
    q = np.linalg.solve(np.eye(p.shape[0]) - gamma * p, r)
    residual = float(np.max(np.abs(q - r - gamma * (p @ q))))
    result = RegionalSolveResult(q=q, residual=residual)
    if reference_q is not None:
        ref = np.asarray(reference_q, dtype=float)
        result.reference = ref
        result.deltas = q - ref
        result.reference_equation_residuals = ref - r - gamma * (p @ ref)
    return result
