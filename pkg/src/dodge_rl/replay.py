"""Fixed-capacity ring buffer of transitions with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            self.action == other.action
            and self.reward == other.reward
            and self.terminal == other.terminal
            and np.array_equal(self.state, other.state)
            and np.array_equal(self.next_state, other.next_state)
        )


@dataclass
class Batch:
    """Column-major view of sampled transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, items) -> "Batch":
        items = list(items)
        return cls(
            np.stack([t.state for t in items]).astype(np.float32),
            np.array([t.action for t in items], dtype=np.int64),
            np.array([t.reward for t in items], dtype=np.float32),
            np.stack([t.next_state for t in items]).astype(np.float32),
            np.array([t.terminal for t in items], dtype=bool),
        )

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[i], int(self.actions[i]), float(self.rewards[i]),
                       self.next_states[i], bool(self.terminals[i]))
            for i in range(len(self))
        ]


class NotReady(RuntimeError):
    """The buffer holds fewer transitions than the warmup threshold."""


class ReplayMemory:
    """Uniform-sampling FIFO replay memory.

    Storage is allocated lazily on the first push, which also fixes the
    state dimension for the lifetime of the buffer.
    """

    def __init__(self, capacity: int = 1_000_000, warmup: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.warmup = int(warmup)
        self.dim: int | None = None
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def _allocate(self, dim: int):
        self.dim = dim
        cap = self.capacity
        self._s = np.zeros((cap, dim), dtype=np.float32)
        self._s2 = np.zeros((cap, dim), dtype=np.float32)
        self._a = np.zeros(cap, dtype=np.uint8)
        self._r = np.zeros(cap, dtype=np.float32)
        self._t = np.zeros(cap, dtype=bool)

    def push(self, t: Transition) -> None:
        s = np.asarray(t.state, dtype=np.float32).reshape(-1)
        s2 = np.asarray(t.next_state, dtype=np.float32).reshape(-1)
        if self.dim is None:
            self._allocate(s.size)
        if s.size != self.dim or s2.size != self.dim:
            raise ValueError(f"state dimension {s.size}/{s2.size} != buffer dimension {self.dim}")
        i = self.cursor
        self._s[i], self._s2[i] = s, s2
        self._a[i], self._r[i], self._t[i] = t.action, t.reward, t.terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, batch: Batch) -> None:
        """Push every row of ``batch`` in order; same result as repeated :meth:`push`."""
        n = len(batch)
        if n == 0:
            return
        if self.dim is None:
            self._allocate(batch.states.shape[1])
        if batch.states.shape[1] != self.dim or batch.next_states.shape[1] != self.dim:
            raise ValueError(f"state dimension {batch.states.shape[1]} != buffer dimension {self.dim}")
        start = 0
        if n > self.capacity:  # only the newest `capacity` rows survive
            start = n - self.capacity
            self.cursor = (self.cursor + start) % self.capacity
            self.size = self.capacity
        while start < n:
            i = self.cursor
            k = min(n - start, self.capacity - i)
            sl = slice(start, start + k)
            self._s[i:i + k] = batch.states[sl]
            self._s2[i:i + k] = batch.next_states[sl]
            self._a[i:i + k] = batch.actions[sl]
            self._r[i:i + k] = batch.rewards[sl]
            self._t[i:i + k] = batch.terminals[sl]
            self.cursor = (i + k) % self.capacity
            self.size = min(self.size + k, self.capacity)
            start += k

    @property
    def ready(self) -> bool:
        return self.size >= max(self.warmup, 1)

    def _oldest_first(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def _gather(self, idx) -> Batch:
        return Batch(self._s[idx], self._a[idx].astype(np.int64), self._r[idx],
                     self._s2[idx], self._t[idx])

    def contents(self) -> Batch:
        """All stored transitions, oldest first."""
        if self.size == 0:
            return Batch(np.zeros((0, self.dim or 0), np.float32), np.zeros(0, np.int64),
                         np.zeros(0, np.float32), np.zeros((0, self.dim or 0), np.float32),
                         np.zeros(0, bool))
        return self._gather(self._oldest_first())

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if not self.ready:
            raise NotReady(f"{self.size} transitions stored, warmup is {self.warmup}")
        return rng.integers(0, self.size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        """Draw ``batch`` transitions uniformly with replacement."""
        return self._gather(self.sample_indices(batch, rng))


def sample(mem: ReplayMemory, batch: int, rng: np.random.Generator) -> list[Transition]:
    return mem.sample(batch, rng).transitions()


def push(mem: ReplayMemory, t: Transition) -> None:
    mem.push(t)
