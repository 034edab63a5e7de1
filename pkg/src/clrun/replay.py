"""Reservoir-sampled episodic memory."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Example(NamedTuple):
    input: np.ndarray
    label: int
    task_id: int


def reservoir_slot(seen, capacity: int, u):
    """Slot that the ``seen``-th item (1-based) should occupy, or -1 to drop it.

    ``u`` is a uniform draw in [0, 1). Works elementwise on arrays so that
    many independent streams can be simulated with the same rule the buffer
    uses.
    """
    seen = np.asarray(seen)
    j = np.floor(np.asarray(u) * seen).astype(np.int64)
    fill = seen <= capacity
    slot = np.where(fill, seen - 1, np.where(j < capacity, j, -1))
    return slot if slot.ndim else int(slot)


class ReplayBuffer:
    """Fixed-capacity memory; after ``N`` insertions each item is resident
    with probability ``capacity / N``."""

    def __init__(self, capacity: int, seed=None):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.seen = 0
        self.rng = np.random.default_rng(seed)
        self._x: np.ndarray | None = None
        self._y = np.zeros(self.capacity, dtype=np.int64)
        self._t = np.zeros(self.capacity, dtype=np.int64)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def items(self) -> list[Example]:
        return [Example(self._x[i], int(self._y[i]), int(self._t[i])) for i in range(self._size)]

    def insert(self, example: Example) -> int:
        """Reservoir step for one example; returns the slot written or -1."""
        self.seen += 1
        if self.capacity == 0:
            return -1
        slot = reservoir_slot(self.seen, self.capacity, self.rng.random())
        if slot < 0:
            return -1
        x = np.asarray(example.input, dtype=np.float64)
        if self._x is None:
            self._x = np.zeros((self.capacity, x.size))
        self._x[slot] = x.ravel()
        self._y[slot] = example.label
        self._t[slot] = example.task_id
        self._size = min(self.seen, self.capacity)
        return slot

    def insert_batch(self, x: np.ndarray, y: np.ndarray, task_ids: np.ndarray) -> None:
        for xi, yi, ti in zip(x, y, task_ids):
            self.insert(Example(xi, int(yi), int(ti)))

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Draw ``n`` stored examples uniformly with replacement.

        An empty buffer (or ``n == 0``) yields empty arrays.
        """
        if self._size == 0 or n <= 0:
            dim = 0 if self._x is None else self._x.shape[1]
            return np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        idx = self.rng.integers(0, self._size, size=n)
        return self._x[idx].copy(), self._y[idx].copy(), self._t[idx].copy()

    def sample_batch(self, n: int) -> list[Example]:
        x, y, t = self.sample(n)
        return [Example(xi, int(yi), int(ti)) for xi, yi, ti in zip(x, y, t)]

    def snapshot(self) -> dict:
        """JSON-friendly record of the buffer contents (labels and task ids only)."""
        return {
            "capacity": self.capacity,
            "seen": self.seen,
            "labels": self._y[: self._size].tolist(),
            "task_ids": self._t[: self._size].tolist(),
        }


def simulate_inclusion(capacity: int, stream_length: int, trials: int, seed=0) -> np.ndarray:
    """Fraction of ``trials`` independent streams in which each item ends up
    resident, driven by :func:`reservoir_slot`."""
    rng = np.random.default_rng(seed)
    slots = np.full((trials, capacity), -1, dtype=np.int64)
    rows = np.arange(trials)
    for n in range(1, stream_length + 1):
        slot = reservoir_slot(np.full(trials, n), capacity, rng.random(trials))
        keep = slot >= 0
        slots[rows[keep], slot[keep]] = n - 1
    counts = np.bincount(slots[slots >= 0], minlength=stream_length)
    return counts / trials
