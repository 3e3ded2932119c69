"""Proportional prioritized experience replay backed by a sum-tree."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Generic, Optional, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

PRIORITY_EPS = 1e-3


@dataclass(frozen=True)
class Transition:
    state: Any
    action: int
    reward: float
    next_state: Any
    terminal: bool


class SumTree:
    """Binary tree of partial sums over ``capacity`` leaves stored in one array.

    Leaf ``i`` lives at ``capacity - 1 + i`` of a complete tree whose size is
    rounded up to a power of two so every leaf sits at the same depth.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._leaves = size
        self.tree = np.zeros(2 * size - 1, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def leaf(self, i: int) -> float:
        return float(self.tree[self._leaves - 1 + i])

    def leaves(self) -> np.ndarray:
        return self.tree[self._leaves - 1 : self._leaves - 1 + self.capacity].copy()

    def set(self, i: int, value: float) -> None:
        if not 0 <= i < self.capacity:
            raise IndexError(i)
        pos = self._leaves - 1 + i
        delta = value - self.tree[pos]
        self.tree[pos] = value
        while pos > 0:
            pos = (pos - 1) // 2
            self.tree[pos] += delta

    def set_many(self, idx: np.ndarray, values: np.ndarray) -> None:
        for i, v in zip(idx, values):
            self.set(int(i), float(v))

    def rebuild(self) -> None:
        """Recompute every internal node from the leaves (removes float drift)."""
        n = self._leaves
        for pos in range(n - 2, -1, -1):
            self.tree[pos] = self.tree[2 * pos + 1] + self.tree[2 * pos + 2]

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each ``mass`` value."""
        mass = np.array(mass, dtype=np.float64)
        pos = np.zeros(mass.shape, dtype=np.int64)
        tree = self.tree
        while True:
            left = 2 * pos + 1
            if left[0] >= len(tree):
                break
            lv = tree[left]
            go_right = mass >= lv
            # never descend into an empty right subtree because of rounding
            go_right &= tree[left + 1] > 0
            mass = np.where(go_right, mass - lv, mass)
            pos = np.where(go_right, left + 1, left)
        return pos - (self._leaves - 1)


@dataclass
class BufferStats:
    size: int
    capacity: int
    pushed: int
    evicted: int
    stale_updates: int
    max_priority: float


class PrioritizedBuffer(Generic[T]):
    """FIFO ring buffer with sampling probability proportional to ``priority ** alpha``.

    ``sample`` returns insertion ids rather than slots so that priority
    updates for items evicted in the meantime can be recognized and skipped.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, eps: float = PRIORITY_EPS):
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        if eps <= 0:
            raise ValueError("eps must be > 0")
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.items: list[Optional[T]] = [None] * capacity
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.priorities = np.zeros(capacity, dtype=np.float64)
        self.pushed = 0
        self.stale_updates = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return min(self.pushed, self.capacity)

    @property
    def evicted(self) -> int:
        return max(0, self.pushed - self.capacity)

    def push(self, item: T) -> int:
        slot = self.pushed % self.capacity
        self.items[slot] = item
        self.ids[slot] = self.pushed
        self._set_priority(slot, self.max_priority)
        self.pushed += 1
        if self.pushed % (16 * self.capacity) == 0:
            self.tree.rebuild()
        return self.pushed - 1

    def _set_priority(self, slot: int, priority: float) -> None:
        self.priorities[slot] = priority
        self.tree.set(slot, priority**self.alpha)

    def probabilities(self) -> np.ndarray:
        """P(i) for every stored slot, in slot order."""
        n = len(self)
        mass = self.priorities[:n] ** self.alpha
        return mass / mass.sum()

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> tuple[list[T], np.ndarray, np.ndarray]:
        """Stratified draw: one uniform point per equal slice of the total mass.

        Returns ``(items, ids, weights)`` with ``weights = (N P(i))^-beta``
        normalized by the batch maximum.
        """
        n = len(self)
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if n < batch_size:
            raise ValueError(f"buffer holds {n} items, fewer than batch size {batch_size}")
        total = self.tree.total
        seg = total / batch_size
        points = (np.arange(batch_size) + rng.random(batch_size)) * seg
        slots = np.minimum(self.tree.find(np.minimum(points, total * (1 - 1e-12))), n - 1)
        mass = self.priorities[slots] ** self.alpha
        probs = mass / total
        if beta == 0:
            weights = np.ones(batch_size)
        else:
            weights = (n * probs) ** (-beta)
            weights = weights / weights.max()
        return [self.items[s] for s in slots], self.ids[slots].copy(), weights

    def update_priorities(self, ids: Sequence[int], td_errors: Sequence[float]) -> None:
        for i, err in zip(ids, td_errors):
            i = int(i)
            slot = i % self.capacity
            if i < 0 or self.ids[slot] != i:
                self.stale_updates += 1
                continue
            p = abs(float(err)) + self.eps
            self._set_priority(slot, p)
            if p > self.max_priority:
                self.max_priority = p

    def stats(self) -> BufferStats:
        return BufferStats(len(self), self.capacity, self.pushed, self.evicted, self.stale_updates, self.max_priority)
