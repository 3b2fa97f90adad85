"""Continuous 2D point-navigation world with obstacles and a proximity cost field."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

GOAL_TOL = 1.0
MAX_EPISODE_STEPS = 20
MAX_COST = 2.0


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains_interior(self, p) -> bool:
        return self.x0 < p[0] < self.x1 and self.y0 < p[1] < self.y1


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float

    def contains_interior(self, p) -> bool:
        return math.hypot(p[0] - self.cx, p[1] - self.cy) < self.radius


@dataclass(frozen=True)
class Map:
    """World rectangle ``[0, width] x [0, height]`` with obstacles.

    ``influence_radius`` is the distance over which the cost field decays from
    its maximum at an obstacle boundary down to zero.
    """

    width: float
    height: float
    rects: tuple[Rect, ...] = ()
    circles: tuple[Circle, ...] = ()
    influence_radius: float = 10.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise MapError("map bounds must have positive area")
        if not (self.influence_radius > 0 and math.isfinite(self.influence_radius)):
            raise MapError(f"influence radius must be positive, got {self.influence_radius}")
        for r in self.rects:
            if not (r.x0 < r.x1 and r.y0 < r.y1):
                raise MapError(f"degenerate rectangle {r}")
            if r.x1 <= 0 or r.y1 <= 0 or r.x0 >= self.width or r.y0 >= self.height:
                raise MapError(f"rectangle {r} lies outside the map bounds")
        for c in self.circles:
            if not c.radius > 0:
                raise MapError(f"circle {c} has non-positive radius")
            nx = min(max(c.cx, 0.0), self.width)
            ny = min(max(c.cy, 0.0), self.height)
            if math.hypot(nx - c.cx, ny - c.cy) >= c.radius:
                raise MapError(f"circle {c} lies outside the map bounds")

    @property
    def has_obstacles(self) -> bool:
        return bool(self.rects or self.circles)

    def in_bounds(self, p) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    def in_obstacle(self, p) -> bool:
        return any(o.contains_interior(p) for o in (*self.rects, *self.circles))

    def to_dict(self) -> dict:
        return {
            "bounds": [self.width, self.height],
            "influence_radius": self.influence_radius,
            "rects": [[r.x0, r.y0, r.x1, r.y1] for r in self.rects],
            "circles": [[c.cx, c.cy, c.radius] for c in self.circles],
        }

    @classmethod
    def from_dict(cls, doc: dict, name: str = "custom") -> "Map":
        try:
            w, h = (float(v) for v in doc["bounds"])
            rects = tuple(Rect(*(float(v) for v in r)) for r in doc.get("rects", []))
            circles = tuple(Circle(*(float(v) for v in c)) for c in doc.get("circles", []))
            r = float(doc.get("influence_radius", 10.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise MapError(f"malformed map document: {exc}") from exc
        return cls(w, h, rects, circles, r, name=name)


def central_obstacle() -> Map:
    return Map(60.0, 60.0, rects=(Rect(20.0, 20.0, 40.0, 40.0),), name="central_obstacle")


BUILTIN_MAPS = {"central_obstacle": central_obstacle}


def load_map(path: str | Path) -> Map:
    """Load a map from a JSON file, or return a built-in map by name."""
    key = str(path)
    if key in BUILTIN_MAPS:
        return BUILTIN_MAPS[key]()
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MapError(f"cannot read map {path}: {exc}") from exc
    return Map.from_dict(doc, name=Path(path).stem)


def _check_in_bounds(m: Map, p) -> None:
    if not m.in_bounds(p):
        raise ValueError(f"point {tuple(p)} is outside the map bounds")


def distance_to_obstacle(m: Map, p) -> float:
    """Euclidean distance from ``p`` to the nearest obstacle boundary.

    Points inside (or on) an obstacle get 0; a map with no obstacles gives inf.
    """
    _check_in_bounds(m, p)
    return float(distances_to_obstacles(m, np.asarray(p, dtype=float)[None, :])[0])


def distances_to_obstacles(m: Map, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`distance_to_obstacle` over an ``(n, 2)`` array, no bounds check."""
    pts = np.asarray(pts, dtype=float)
    h = np.full(pts.shape[0], np.inf)
    x, y = pts[:, 0], pts[:, 1]
    for r in m.rects:
        dx = np.maximum(np.maximum(r.x0 - x, x - r.x1), 0.0)
        dy = np.maximum(np.maximum(r.y0 - y, y - r.y1), 0.0)
        h = np.minimum(h, np.hypot(dx, dy))
    for c in m.circles:
        h = np.minimum(h, np.maximum(np.hypot(x - c.cx, y - c.cy) - c.radius, 0.0))
    return h


def cost_from_distance(h, r: float):
    """Proximity cost: ``2 - 2h/r`` inside the influence radius, zero beyond it."""
    h = np.asarray(h, dtype=float)
    c = np.where(h <= r, MAX_COST - MAX_COST * h / r, 0.0)
    return float(c) if c.ndim == 0 else c


def step_cost(m: Map, p) -> float:
    return float(cost_from_distance(distance_to_obstacle(m, p), m.influence_radius))


def step_costs(m: Map, pts: np.ndarray) -> np.ndarray:
    return cost_from_distance(distances_to_obstacles(m, pts), m.influence_radius)


def _segment_entry_rect(p, d, r: Rect) -> float | None:
    """Parameter in [0, 1] at which ``p + t d`` first enters the open rectangle."""
    t_lo, t_hi = -math.inf, math.inf
    for pi, di, lo, hi in ((p[0], d[0], r.x0, r.x1), (p[1], d[1], r.y0, r.y1)):
        if di == 0.0:
            if not lo < pi < hi:
                return None
            continue
        a, b = (lo - pi) / di, (hi - pi) / di
        if a > b:
            a, b = b, a
        t_lo, t_hi = max(t_lo, a), min(t_hi, b)
    if t_lo < t_hi and t_lo < 1.0 and t_hi > 0.0:
        return max(t_lo, 0.0)
    return None


def _segment_entry_circle(p, d, c: Circle) -> float | None:
    fx, fy = p[0] - c.cx, p[1] - c.cy
    a = d[0] * d[0] + d[1] * d[1]
    if a == 0.0:
        return None
    b = 2.0 * (fx * d[0] + fy * d[1])
    cc = fx * fx + fy * fy - c.radius * c.radius
    disc = b * b - 4 * a * cc
    if disc <= 0.0:
        return None
    sq = math.sqrt(disc)
    t0, t1 = (-b - sq) / (2 * a), (-b + sq) / (2 * a)
    if t0 < 1.0 and t1 > 0.0:
        return max(t0, 0.0)
    return None


def move(m: Map, pos, delta) -> np.ndarray:
    """Apply displacement ``delta`` from ``pos``: clip to bounds, stop at obstacle boundaries."""
    px, py = float(pos[0]), float(pos[1])
    tx = min(max(px + float(delta[0]), 0.0), m.width)
    ty = min(max(py + float(delta[1]), 0.0), m.height)
    d = (tx - px, ty - py)
    t_best, hit = 1.0, None
    for o in m.rects:
        t = _segment_entry_rect((px, py), d, o)
        if t is not None and t < t_best:
            t_best, hit = t, o
    for o in m.circles:
        t = _segment_entry_circle((px, py), d, o)
        if t is not None and t < t_best:
            t_best, hit = t, o
    if hit is None:
        return np.array([tx, ty])
    nx, ny = px + t_best * d[0], py + t_best * d[1]
    if isinstance(hit, Rect):
        # snap onto the face crossed first so rounding never lands inside
        if hit.x0 < nx < hit.x1 and hit.y0 < ny < hit.y1:
            cand = [(abs(nx - hit.x0), "x", hit.x0), (abs(nx - hit.x1), "x", hit.x1),
                    (abs(ny - hit.y0), "y", hit.y0), (abs(ny - hit.y1), "y", hit.y1)]
            _, axis, val = min(cand)
            if axis == "x":
                nx = val
            else:
                ny = val
    else:
        vx, vy = nx - hit.cx, ny - hit.cy
        norm = math.hypot(vx, vy)
        if norm < hit.radius:
            if norm == 0.0:
                vx, vy, norm = -d[0], -d[1], math.hypot(d[0], d[1])
            s = hit.radius * (1 + 1e-12) / norm
            nx, ny = hit.cx + vx * s, hit.cy + vy * s
    return np.array([nx, ny])


@dataclass
class EnvState:
    position: np.ndarray
    goal: np.ndarray
    steps_elapsed: int = 0


@dataclass
class StepResult:
    next_state: EnvState
    reward: float
    cost: float
    done: bool
    reached: bool


def step(state: EnvState, a, m: Map, goal_tol: float = GOAL_TOL,
         max_steps: int = MAX_EPISODE_STEPS) -> StepResult:
    a = np.asarray(a, dtype=float)
    if a.shape != (2,) or not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0):
        raise ValueError(f"action {a} outside the box [-1, 1]^2")
    nxt = move(m, state.position, a)
    reached = bool(np.linalg.norm(nxt - state.goal) <= goal_tol)
    steps = state.steps_elapsed + 1
    return StepResult(
        next_state=EnvState(nxt, state.goal, steps),
        reward=0.0 if reached else -1.0,
        cost=step_cost(m, nxt),
        done=reached or steps >= max_steps,
        reached=reached,
    )


def sample_free_state(m: Map, rng: np.random.Generator, budget: int = 10_000) -> np.ndarray:
    for _ in range(budget):
        p = rng.uniform((0.0, 0.0), (m.width, m.height))
        if not m.in_obstacle(p):
            return p
    raise RuntimeError(f"no free state found after {budget} samples; map is nearly blocked")


def sample_free_states(m: Map, rng: np.random.Generator, n: int,
                       budget: int = 10_000) -> np.ndarray:
    """Draw ``n`` free states; equivalent in distribution to repeated :func:`sample_free_state`."""
    return np.stack([sample_free_state(m, rng, budget) for _ in range(n)]) if n else np.zeros((0, 2))


class NavEnv:
    """Stateful single-agent wrapper around :func:`step` used for rollouts."""

    def __init__(self, m: Map, goal_tol: float = GOAL_TOL, max_steps: int = MAX_EPISODE_STEPS):
        self.map = m
        self.goal_tol = goal_tol
        self.max_steps = max_steps
        self.state: EnvState | None = None

    def reset(self, start: Sequence[float], goal: Sequence[float]) -> EnvState:
        start = np.asarray(start, dtype=float)
        goal = np.asarray(goal, dtype=float)
        _check_in_bounds(self.map, start)
        _check_in_bounds(self.map, goal)
        self.state = EnvState(start.copy(), goal.copy(), 0)
        return self.state

    def step(self, a) -> StepResult:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        res = step(self.state, a, self.map, self.goal_tol, self.max_steps)
        self.state = res.next_state
        return res
