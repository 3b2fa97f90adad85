"""Fixed-support categorical distributions and the C51 projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AtomGrid:
    v_min: float
    v_max: float
    n_atoms: int

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError(f"v_min={self.v_min} must be below v_max={self.v_max}")
        if self.n_atoms < 2:
            raise ValueError("need at least two atoms")

    @property
    def delta(self) -> float:
        return (self.v_max - self.v_min) / (self.n_atoms - 1)

    @property
    def atoms(self) -> np.ndarray:
        return self.v_min + np.arange(self.n_atoms) * self.delta


def distance_grid(max_steps: int = 20) -> AtomGrid:
    """Atoms 1, 2, ..., ``max_steps`` counting steps to the goal."""
    return AtomGrid(1.0, float(max_steps), max_steps)


def cost_grid(v_max: float = 40.0, n_atoms: int = 40) -> AtomGrid:
    return AtomGrid(0.0, v_max, n_atoms)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mean_of(probs: np.ndarray, grid: AtomGrid) -> np.ndarray:
    return probs @ grid.atoms


def categorical_project(grid: AtomGrid, target_values, target_probs) -> np.ndarray:
    """Project a weighted set of values onto ``grid`` by linear interpolation.

    Each value is clipped into ``[v_min, v_max]`` and its mass is split between
    the two neighbouring atoms in proportion to proximity.
    """
    values = np.asarray(target_values, dtype=np.float64).ravel()
    probs = np.asarray(target_probs, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("empty target set")
    if values.shape != probs.shape:
        raise ValueError("target values and probabilities differ in length")
    if np.any(probs < 0):
        raise ValueError("negative probability mass")
    return project_batch(grid, values[None, :], probs[None, :])[0]


def project_batch(grid: AtomGrid, values: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Row-wise projection of ``(B, M)`` value/mass arrays onto ``(B, n_atoms)``."""
    n = grid.n_atoms
    b = (np.clip(values, grid.v_min, grid.v_max) - grid.v_min) / grid.delta
    lower = np.floor(b).astype(np.int64)
    np.clip(lower, 0, n - 1, out=lower)
    upper_w = b - lower
    upper = np.minimum(lower + 1, n - 1)
    rows = np.broadcast_to(np.arange(values.shape[0])[:, None] * n, values.shape)
    size = values.shape[0] * n
    out = np.bincount((rows + lower).ravel(), (probs * (1.0 - upper_w)).ravel(), minlength=size)
    out += np.bincount((rows + upper).ravel(), (probs * upper_w).ravel(), minlength=size)
    return out.reshape(values.shape[0], n)
