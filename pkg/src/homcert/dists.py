"""Finite categorical distributions with strict normalization checking.

Every probability distribution in this package is a ``Categorical``.  The
constructor rejects malformed weight vectors, so kernels and policies built
from validated distributions can never surface a normalization error at
query time.
"""

from __future__ import annotations

from typing import Any, Callable, Iterable, Iterator

NORMALIZATION_ATOL = 1e-12


class DistributionError(ValueError):
    """Raised when weights are negative or do not sum to one."""


class Categorical:
    """Immutable finite distribution over hashable outcomes.

    Outcomes with zero weight are dropped; iteration order is the order in
    which outcomes were supplied (duplicates merge into the first slot), so
    downstream summations have a fixed, reproducible order.
    """

    __slots__ = ("_items", "_index")

    def __init__(self, items: Iterable[tuple[Any, float]]):
        merged: dict[Any, float] = {}
        order: list[Any] = []
        for outcome, p in items:
            p = float(p)
            if p < 0.0:
                raise DistributionError(f"negative probability {p!r} for {outcome!r}")
            if outcome in merged:
                merged[outcome] += p
            elif p > 0.0:
                merged[outcome] = p
                order.append(outcome)
        total = sum(merged[o] for o in order)
        if abs(total - 1.0) > NORMALIZATION_ATOL:
            raise DistributionError(f"weights sum to {total!r}, expected 1")
        if not order:
            raise DistributionError("empty distribution")
        self._items = tuple((o, merged[o]) for o in order)
        self._index = {o: p for o, p in self._items}

    @classmethod
    def point(cls, outcome: Any) -> "Categorical":
        return cls([(outcome, 1.0)])

    @classmethod
    def from_weights(cls, items: Iterable[tuple[Any, float]]) -> "Categorical":
        """Build from non-negative weights, renormalizing."""
        pairs = [(o, float(w)) for o, w in items]
        total = sum(w for _, w in pairs)
        if total <= 0.0:
            raise DistributionError("weights sum to zero")
        return cls([(o, w / total) for o, w in pairs])

    def items(self) -> tuple[tuple[Any, float], ...]:
        return self._items

    def support(self) -> tuple[Any, ...]:
        return tuple(o for o, _ in self._items)

    def __getitem__(self, outcome: Any) -> float:
        return self._index.get(outcome, 0.0)

    def __contains__(self, outcome: Any) -> bool:
        return outcome in self._index

    def __iter__(self) -> Iterator[tuple[Any, float]]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Categorical):
            return NotImplemented
        return self._index == other._index

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        body = ", ".join(f"{o!r}: {p:.6g}" for o, p in self._items)
        return f"Categorical({{{body}}})"

    def allclose(self, other: "Categorical", atol: float = 1e-12) -> bool:
        keys = set(self._index) | set(other._index)
        return all(abs(self[k] - other[k]) <= atol for k in keys)

    def l1_distance(self, other: "Categorical") -> float:
        keys = list(self._index)
        keys += [k for k in other._index if k not in self._index]
        return sum(abs(self[k] - other[k]) for k in keys)

    def tv_distance(self, other: "Categorical") -> float:
        """Total-variation distance, half the L1 distance, in [0, 1]."""
        return 0.5 * self.l1_distance(other)

    def expectation(self, fn: Callable[[Any], float]) -> float:
        return sum(p * fn(o) for o, p in self._items)

    def map(self, fn: Callable[[Any], Any]) -> "Categorical":
        """Push-forward through ``fn``, merging colliding outcomes."""
        return Categorical((fn(o), p) for o, p in self._items)
