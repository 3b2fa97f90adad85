from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    c: float
    s2: np.ndarray
    goal: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    c: np.ndarray
    s2: np.ndarray
    goal: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.s.shape[0]

    @property
    def r(self) -> np.ndarray:
        return np.where(self.done, 0.0, -1.0)


class ReplayBuffer:
    """Bounded FIFO of transitions stored column-wise.

    ``done`` marks goal arrival only; episodes cut by the step cap are not
    terminal for bootstrapping.  Each slot remembers the absolute index of the
    last transition of its episode so goals can be relabeled with states the
    agent actually reached later on.
    """

    FIELDS = ("s", "a", "c", "s2", "goal", "done", "ep_end")

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, 2))
        self.a = np.zeros((capacity, 2))
        self.c = np.zeros(capacity)
        self.s2 = np.zeros((capacity, 2))
        self.goal = np.zeros((capacity, 2))
        self.done = np.zeros(capacity, dtype=bool)
        self.ep_end = np.zeros(capacity, dtype=np.int64)
        self.n_added = 0

    def __len__(self) -> int:
        return min(self.n_added, self.capacity)

    def add(self, t: Transition, ep_end: int | None = None) -> None:
        i = self.n_added % self.capacity
        self.s[i], self.a[i], self.c[i] = t.s, t.a, t.c
        self.s2[i], self.goal[i], self.done[i] = t.s2, t.goal, t.done
        self.ep_end[i] = self.n_added if ep_end is None else ep_end
        self.n_added += 1

    def add_episode(self, transitions: list[Transition]) -> None:
        end = self.n_added + len(transitions) - 1
        for t in transitions:
            self.add(t, end)

    def _slots(self) -> np.ndarray:
        """Slot indices in insertion order, oldest first."""
        n = len(self)
        if self.n_added <= self.capacity:
            return np.arange(n)
        start = self.n_added % self.capacity
        return (start + np.arange(n)) % self.capacity

    def states(self) -> np.ndarray:
        """Visited states (transition origins), oldest first."""
        return self.s[self._slots()].copy()

    def transition(self, k: int) -> Transition:
        """The ``k``-th oldest stored transition."""
        i = self._slots()[k]
        return Transition(self.s[i].copy(), self.a[i].copy(), 0.0 if self.done[i] else -1.0,
                          float(self.c[i]), self.s2[i].copy(), self.goal[i].copy(), bool(self.done[i]))

    def sample(self, batch_size: int, rng: np.random.Generator, relabel_prob: float = 0.0,
               goal_tol: float = 1.0) -> Batch:
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, n, size=batch_size)
        goal = self.goal[idx].copy()
        done = self.done[idx].copy()
        if relabel_prob > 0.0:
            flip = rng.random(batch_size) < relabel_prob
            # absolute insertion index of each sampled slot
            base = self.n_added - n if self.n_added > self.capacity else 0
            order = (idx - (self.n_added % self.capacity if self.n_added > self.capacity else 0)) % self.capacity
            absolute = base + order
            span = self.ep_end[idx] - absolute
            future = absolute + np.floor(rng.random(batch_size) * (span + 1)).astype(np.int64)
            future = np.minimum(future, self.n_added - 1)
            fslot = future % self.capacity
            new_goal = self.s2[fslot]
            goal[flip] = new_goal[flip]
            reached = np.linalg.norm(self.s2[idx] - new_goal, axis=1) <= goal_tol
            done[flip] = reached[flip]
        return Batch(self.s[idx].copy(), self.a[idx].copy(), self.c[idx].copy(),
                     self.s2[idx].copy(), goal, done)

    def to_arrays(self) -> dict[str, np.ndarray]:
        slots = self._slots()
        out = {k: getattr(self, k)[slots].copy() for k in self.FIELDS}
        # rebase episode ends so the arrays are self-contained
        out["ep_end"] = out["ep_end"] - (self.n_added - len(self))
        return out

    @classmethod
    def from_arrays(cls, capacity: int, arrays: dict[str, np.ndarray]) -> "ReplayBuffer":
        buf = cls(capacity)
        n = len(arrays["s"])
        if n > capacity:
            raise ValueError("stored buffer larger than capacity")
        for k in cls.FIELDS:
            getattr(buf, k)[:n] = arrays[k]
        buf.n_added = n
        return buf
