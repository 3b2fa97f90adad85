"""Grid ground truth for distances and minimum achievable cost.

Used for difficulty banding, critic validation and tests only; never inside
training updates or planning.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from safenav import envsim

SQRT2 = math.sqrt(2.0)
_MOVES = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


class Difficulty(enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @classmethod
    def parse(cls, s: "str | Difficulty") -> "Difficulty":
        return s if isinstance(s, cls) else cls(str(s).lower())


BANDS = {
    Difficulty.EASY: (3.0, 10.0),
    Difficulty.MEDIUM: (10.0, 20.0),
    Difficulty.HARD: (20.0, 45.0),
}


class OutOfBand(ValueError):
    """Raised when a distance falls in no difficulty band; the caller should resample."""


class Unreachable(ValueError):
    pass


def difficulty_of(d: float) -> Difficulty:
    if not math.isfinite(d):
        raise OutOfBand(f"distance {d} is not finite")
    for diff, (lo, hi) in BANDS.items():
        if lo <= d < hi:
            return diff
    raise OutOfBand(f"distance {d:.3f} steps lies outside every band")


@dataclass
class GridField:
    """Discretization of a map into square cells of side ``1/resolution``.

    A cell is free when its center is outside every obstacle interior; its cost
    is the proximity cost at the center.
    """

    map: envsim.Map
    resolution: float = 2.0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.nx = max(1, int(round(self.map.width * self.resolution)))
        self.ny = max(1, int(round(self.map.height * self.resolution)))
        self.cell = (self.map.width / self.nx, self.map.height / self.ny)
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        self.centers = np.stack([(ix + 0.5) * self.cell[0], (iy + 0.5) * self.cell[1]], axis=-1)
        flat = self.centers.reshape(-1, 2)
        self.free = np.array([not self.map.in_obstacle(p) for p in flat]).reshape(self.nx, self.ny)
        cost = envsim.step_costs(self.map, flat).reshape(self.nx, self.ny)
        self.cost = np.where(self.free, cost, envsim.MAX_COST)

    def index(self, i: int, j: int) -> int:
        return i * self.ny + j

    def cell_of(self, p) -> tuple[int, int]:
        """Cell containing ``p``, snapped to the nearest free cell if it is blocked."""
        i = min(max(int(p[0] / self.cell[0]), 0), self.nx - 1)
        j = min(max(int(p[1] / self.cell[1]), 0), self.ny - 1)
        if self.free[i, j]:
            return i, j
        fi, fj = np.nonzero(self.free)
        if len(fi) == 0:
            raise Unreachable("map has no free cells")
        k = np.argmin((self.centers[fi, fj, 0] - p[0]) ** 2 + (self.centers[fi, fj, 1] - p[1]) ** 2)
        return int(fi[k]), int(fj[k])

    def edges(self):
        """Directed 8-connected moves between free cells without corner cutting.

        Yields arrays ``(src, dst, length_world)``.
        """
        src, dst, length = [], [], []
        free = self.free
        cx, cy = self.cell
        for di, dj in _MOVES:
            i0, i1 = max(0, -di), self.nx - max(0, di)
            j0, j1 = max(0, -dj), self.ny - max(0, dj)
            a = free[i0:i1, j0:j1] & free[i0 + di:i1 + di, j0 + dj:j1 + dj]
            if di and dj:
                a &= free[i0 + di:i1 + di, j0:j1] & free[i0:i1, j0 + dj:j1 + dj]
            ii, jj = np.nonzero(a)
            ii, jj = ii + i0, jj + j0
            src.append(ii * self.ny + jj)
            dst.append((ii + di) * self.ny + jj + dj)
            length.append(np.full(len(ii), math.hypot(di * cx, dj * cy)))
        return np.concatenate(src), np.concatenate(dst), np.concatenate(length)

    @cached_property
    def _graphs(self):
        src, dst, length = self.edges()
        n = self.nx * self.ny
        steps = length / SQRT2
        dist_g = csr_matrix((steps, (src, dst)), shape=(n, n))
        cost_w = self.cost.ravel()[dst] * steps
        # zero-weight edges vanish from a sparse matrix; keep them as a tiny epsilon
        cost_g = csr_matrix((np.maximum(cost_w, 1e-300), (src, dst)), shape=(n, n))
        return dist_g, cost_g, (src, dst, steps, cost_w)

    def distance_field(self, s) -> np.ndarray:
        """Oracle distance (policy steps) from ``s`` to every cell, shape ``(nx, ny)``."""
        i, j = self.cell_of(s)
        d = dijkstra(self._graphs[0], indices=self.index(i, j))
        return d.reshape(self.nx, self.ny)

    def cost_field(self, s) -> np.ndarray:
        i, j = self.cell_of(s)
        d = dijkstra(self._graphs[1], indices=self.index(i, j))
        d[d < 1e-200] = 0.0
        return d.reshape(self.nx, self.ny)

    def lookup(self, field: np.ndarray, g) -> float:
        return float(field[self.cell_of(g)])

    def distance_path(self, s, g) -> list[tuple[int, int]]:
        """Cells of one shortest (distance) path from ``s`` to ``g``."""
        i, j = self.cell_of(s)
        gi, gj = self.cell_of(g)
        d, pred = dijkstra(self._graphs[0], indices=self.index(i, j), return_predecessors=True)
        tgt = self.index(gi, gj)
        if not math.isfinite(d[tgt]):
            raise Unreachable(f"{tuple(g)} unreachable from {tuple(s)}")
        path = [tgt]
        while path[-1] != self.index(i, j):
            path.append(int(pred[path[-1]]))
        return [divmod(k, self.ny) for k in reversed(path)]

    def path_cost(self, cells: list[tuple[int, int]]) -> float:
        """Cumulative cost of a cell path under the same weighting as :meth:`cost_field`."""
        total = 0.0
        for (i0, j0), (i1, j1) in zip(cells[:-1], cells[1:]):
            length = math.hypot((i1 - i0) * self.cell[0], (j1 - j0) * self.cell[1])
            total += self.cost[i1, j1] * length / SQRT2
        return total


_FIELDS: dict[tuple, GridField] = {}


def grid_field(m: envsim.Map, resolution: float = 2.0) -> GridField:
    key = (m, resolution)
    if key not in _FIELDS:
        _FIELDS[key] = GridField(m, resolution)
    return _FIELDS[key]


def oracle_distance(m: envsim.Map, s, g, resolution: float = 2.0) -> float:
    """Shortest 8-connected grid path length from ``s`` to ``g``, in policy steps.

    World length is divided by sqrt(2), the largest displacement of one action.
    """
    gf = grid_field(m, resolution)
    d = gf.lookup(gf.distance_field(s), g)
    if not math.isfinite(d):
        raise Unreachable(f"{tuple(g)} unreachable from {tuple(s)}")
    return d


def oracle_min_cost(m: envsim.Map, s, g, resolution: float = 2.0) -> float:
    """Least cumulative proximity cost over grid paths from ``s`` to ``g``.

    Each move is charged the destination cell's cost times its length in steps.
    """
    gf = grid_field(m, resolution)
    c = gf.lookup(gf.cost_field(s), g)
    if not math.isfinite(c):
        raise Unreachable(f"{tuple(g)} unreachable from {tuple(s)}")
    return c
