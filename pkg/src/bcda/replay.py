"""Bounded FIFO transition buffer with uniform sampling."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, InsufficientData


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    d: bool
    y: np.ndarray | None = None


class Batch(NamedTuple):
    S: np.ndarray
    A: np.ndarray
    R: np.ndarray
    S_next: np.ndarray
    D: np.ndarray
    index: np.ndarray


class TrainingBuffer:
    """Ring buffer over preallocated arrays; the oldest entry is evicted first.

    ``Y`` holds optional cached targets (NaN when absent); it is the only
    field that may change after insertion.
    """

    def __init__(self, capacity, obs_dim, action_dim, rng, target_dim=1):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.S = np.zeros((capacity, obs_dim))
        self.A = np.zeros((capacity, action_dim))
        self.R = np.zeros(capacity)
        self.S_next = np.zeros((capacity, obs_dim))
        self.D = np.zeros(capacity)
        self.Y = np.full((capacity, target_dim), np.nan)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, t):
        s, a, s2 = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (t.s, t.a, t.s_next))
        if s.shape[0] != self.S.shape[1] or s2.shape[0] != self.S.shape[1] or a.shape[0] != self.A.shape[1]:
            raise DimensionMismatch(
                f"transition dims (s={s.shape[0]}, a={a.shape[0]}, s'={s2.shape[0]}) "
                f"do not match buffer ({self.S.shape[1]}, {self.A.shape[1]})"
            )
        if not np.isfinite(t.r):
            raise ValueError("reward must be finite")
        i = self._next
        self.S[i] = s
        self.A[i] = a
        self.R[i] = t.r
        self.S_next[i] = s2
        self.D[i] = float(bool(t.d))
        self.Y[i] = np.nan if t.y is None else t.y
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self):
        return self._next if self.size == self.capacity else 0

    def get(self, i):
        y = self.Y[i]
        return Transition(
            self.S[i].copy(), self.A[i].copy(), float(self.R[i]), self.S_next[i].copy(),
            bool(self.D[i]), None if np.all(np.isnan(y)) else y.copy(),
        )

    def sample(self, batch_size):
        """Uniform draw with replacement over live entries."""
        if self.size < batch_size:
            raise InsufficientData(f"buffer holds {self.size} transitions, {batch_size} requested")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return Batch(self.S[idx], self.A[idx], self.R[idx], self.S_next[idx], self.D[idx], idx)

    def store_targets(self, index, y):
        self.Y[index] = np.asarray(y, dtype=np.float64).reshape(len(index), -1)


def buffer_push(buf, t):
    buf.push(t)


def buffer_sample(buf, batch_size):
    return buf.sample(batch_size)
