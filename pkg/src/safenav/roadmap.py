"""Directed roadmap over replay-buffer states with critic-predicted edge weights."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from safenav import envsim
from safenav.gcrl.agent import Agent
from safenav.gcrl.checkpoint import Checkpoint

MAGIC = b"SNRG"
VERSION = 1
DEFAULT_NODES = 500
DEFAULT_MAXDIST = 7.0
DEFAULT_MAXCOST = 20.0
DEDUP_RESOLUTION = 0.5
# buffer states closer than this to an obstacle are not used as nodes
DEFAULT_CLEARANCE = 1.0

_EDGE_DTYPE = np.dtype([("src", "<i8"), ("dst", "<i8"), ("d", "<f8"), ("c", "<f8")])


class RoadmapError(ValueError):
    pass


class IsolatedEndpoint(RoadmapError):
    """An attached start has no outgoing edge, or a goal has no incoming edge."""


@dataclass(frozen=True)
class EdgeMode:
    """Scalar edge weight used by search: ``distance``, ``cost`` or ``blend`` (d + alpha * c)."""

    kind: str = "blend"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("distance", "cost", "blend"):
            raise ValueError(f"unknown edge mode {self.kind!r}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"blend weight must be finite and nonnegative, got {self.alpha}")

    @classmethod
    def distance(cls) -> "EdgeMode":
        return cls("distance", 0.0)

    @classmethod
    def cost(cls) -> "EdgeMode":
        return cls("cost", 0.0)

    @classmethod
    def blend(cls, alpha: float = 1.0) -> "EdgeMode":
        return cls("blend", float(alpha))

    @classmethod
    def parse(cls, name: str, alpha: float = 1.0) -> "EdgeMode":
        name = name.lower()
        if name == "blend":
            return cls.blend(alpha)
        return cls(name, 0.0)

    def weight(self, d, c):
        if self.kind == "distance":
            return d
        if self.kind == "cost":
            return c
        return d + self.alpha * c

    @property
    def wait_cost(self) -> float:
        """Per-step penalty for waiting in place during timed search."""
        return 0.0 if self.kind == "cost" else 1.0


class Roadmap:
    """Immutable directed graph with per-edge predicted distance and cost.

    Edges are kept as parallel arrays sorted by ``(src, dst)``.
    """

    def __init__(self, nodes, src, dst, d_pred, c_pred, maxdist: float, maxcost: float,
                 digest: str = ""):
        self.nodes = np.array(nodes, dtype=np.float64).reshape(-1, 2)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        order = np.lexsort((dst, src))
        self.src, self.dst = src[order], dst[order]
        self.d_pred = np.asarray(d_pred, dtype=np.float64)[order]
        self.c_pred = np.asarray(c_pred, dtype=np.float64)[order]
        self.maxdist, self.maxcost = float(maxdist), float(maxcost)
        self.digest = digest
        for a in (self.nodes, self.src, self.dst, self.d_pred, self.c_pred):
            a.setflags(write=False)
        n = len(self.nodes)
        if len(self.src) and (self.src.min() < 0 or max(self.src.max(), self.dst.max()) >= n):
            raise RoadmapError("edge endpoint out of range")
        if np.any(self.src == self.dst):
            raise RoadmapError("self-edges are not allowed")
        if len(np.unique(self.src * max(n, 1) + self.dst)) != len(self.src):
            raise RoadmapError("duplicate edges")

    @classmethod
    def from_edges(cls, nodes, edges, maxdist: float = math.inf, maxcost: float = math.inf,
                   digest: str = "") -> "Roadmap":
        """Build from ``[(src, dst, d, c), ...]``; intended for hand-made graphs."""
        e = np.array(edges, dtype=np.float64).reshape(-1, 4)
        return cls(nodes, e[:, 0].astype(np.int64), e[:, 1].astype(np.int64), e[:, 2], e[:, 3],
                   maxdist, maxcost, digest)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @cached_property
    def _index(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(zip(self.src, self.dst))}

    @cached_property
    def _offsets(self) -> np.ndarray:
        return np.searchsorted(self.src, np.arange(self.n_nodes + 1))

    def has_edge(self, i: int, j: int) -> bool:
        return (int(i), int(j)) in self._index

    def edge(self, i: int, j: int) -> tuple[float, float]:
        try:
            k = self._index[(int(i), int(j))]
        except KeyError:
            raise RoadmapError(f"no edge {i} -> {j}") from None
        return float(self.d_pred[k]), float(self.c_pred[k])

    def successors(self, i: int) -> np.ndarray:
        lo, hi = self._offsets[i], self._offsets[i + 1]
        return self.dst[lo:hi]

    def weights(self, mode: EdgeMode) -> np.ndarray:
        return mode.weight(self.d_pred, self.c_pred)

    def adjacency(self, mode: EdgeMode) -> list[list[tuple[int, float]]]:
        """Out-neighbor lists ``[(dst, weight), ...]`` sorted by destination index."""
        w = self.weights(mode)
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for i, j, x in zip(self.src.tolist(), self.dst.tolist(), w.tolist()):
            adj[i].append((j, x))
        return adj

    def reverse_adjacency(self, mode: EdgeMode) -> list[list[tuple[int, float]]]:
        w = self.weights(mode)
        radj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for i, j, x in zip(self.src.tolist(), self.dst.tolist(), w.tolist()):
            radj[j].append((i, x))
        return radj

    def __eq__(self, other):
        if not isinstance(other, Roadmap):
            return NotImplemented
        return (self.maxdist == other.maxdist and self.maxcost == other.maxcost
                and self.digest == other.digest
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.d_pred, other.d_pred)
                and np.array_equal(self.c_pred, other.c_pred))

    def __repr__(self):
        return f"Roadmap(nodes={self.n_nodes}, edges={self.n_edges}, maxdist={self.maxdist}, maxcost={self.maxcost})"


def edge_weight(rm: Roadmap, edge: tuple[int, int], mode: EdgeMode) -> float:
    d, c = rm.edge(*edge)
    return float(mode.weight(d, c))


def filter_clearance(states: np.ndarray, m: envsim.Map, clearance: float = DEFAULT_CLEARANCE) -> np.ndarray:
    """Keep states at least ``clearance`` from every obstacle.

    States resting on an obstacle face make poor waypoints: the policy pushes
    into the face and the stop-at-boundary rule pins it there.
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, 2)
    if clearance <= 0 or len(states) == 0:
        return states
    return states[envsim.distances_to_obstacles(m, states) >= clearance]


def sample_nodes(states: np.ndarray, n: int, rng: np.random.Generator,
                 resolution: float = DEDUP_RESOLUTION) -> np.ndarray:
    """Draw ``n`` buffer states without replacement, then drop near-duplicates.

    A drawn state is kept unless an already kept state lies strictly closer than
    ``resolution``.
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, 2)
    if n <= 0:
        raise RoadmapError("node count must be positive")
    if len(states) == 0:
        raise RoadmapError("cannot sample nodes from an empty buffer")
    pick = rng.permutation(len(states))[:min(n, len(states))]
    kept: list[np.ndarray] = []
    cells: dict[tuple[int, int], list[int]] = {}
    r2 = resolution * resolution
    for p in states[pick]:
        ci, cj = int(math.floor(p[0] / resolution)), int(math.floor(p[1] / resolution))
        clash = False
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                for k in cells.get((ci + di, cj + dj), ()):
                    q = kept[k]
                    if (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 < r2:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if not clash:
            cells.setdefault((ci, cj), []).append(len(kept))
            kept.append(p)
    return np.array(kept).reshape(-1, 2)


def _predict_pairs(agent: Agent, s: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d, c = agent.predict_both(s, g)
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(c))):
        raise RoadmapError("critic produced non-finite predictions")
    return d, c


def _pair_edges(agent: Agent, a: np.ndarray, b: np.ndarray, a_ids: np.ndarray, b_ids: np.ndarray,
                maxdist: float, maxcost: float, skip_diagonal: bool):
    """Predict every pair (a_i -> b_j) and keep those under both cutoffs."""
    ii, jj = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    if skip_diagonal:
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]
    if len(ii) == 0:
        empty = np.empty(0)
        return empty.astype(np.int64), empty.astype(np.int64), empty, empty
    d, c = _predict_pairs(agent, a[ii], b[jj])
    ok = (d < maxdist) & (c < maxcost)
    return a_ids[ii[ok]], b_ids[jj[ok]], d[ok], c[ok]


def _resolve(ckpt: Checkpoint | Agent, constrained: bool) -> tuple[Agent, str]:
    if isinstance(ckpt, Agent):
        return ckpt, ""
    if not ckpt.trained:
        raise RoadmapError("checkpoint has not been trained")
    if constrained:
        if ckpt.constrained is None:
            raise RoadmapError("checkpoint has no fine-tuned agent")
        return ckpt.constrained, ckpt.digest
    return ckpt.unconstrained, ckpt.digest


def build(nodes, ckpt: Checkpoint, maxdist: float = DEFAULT_MAXDIST,
          maxcost: float = DEFAULT_MAXCOST, constrained: bool = False,
          digest: str | None = None) -> Roadmap:
    """Annotate all ordered node pairs with critic predictions and prune by both cutoffs.

    Predictions come from the first-phase agent unless ``constrained`` is set.
    ``digest`` overrides the recorded checkpoint digest (saves re-hashing).
    """
    if not (maxdist > 0 and maxcost > 0):
        raise RoadmapError("cutoffs must be positive")
    agent, ck_digest = _resolve(ckpt, constrained)
    nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 2)
    ids = np.arange(len(nodes))
    src, dst, d, c = _pair_edges(agent, nodes, nodes, ids, ids, maxdist, maxcost, True)
    return Roadmap(nodes, src, dst, d, c, maxdist, maxcost, ck_digest if digest is None else digest)


def from_checkpoint(ckpt: Checkpoint, seed: int, n_nodes: int = DEFAULT_NODES,
                    maxdist: float = DEFAULT_MAXDIST, maxcost: float = DEFAULT_MAXCOST,
                    clearance: float = DEFAULT_CLEARANCE) -> Roadmap:
    """Sample nodes from the checkpoint's buffer and build the roadmap, seeded by ``seed``."""
    if ckpt.buffer is None or len(ckpt.buffer) == 0:
        raise RoadmapError("checkpoint has an empty replay buffer")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    nodes = sample_nodes(filter_clearance(ckpt.buffer.states(), ckpt.map, clearance), n_nodes, rng)
    return build(nodes, ckpt, maxdist, maxcost)


def attach_endpoints(rm: Roadmap, agent: Agent, points, roles=None) -> tuple[Roadmap, list[int]]:
    """Return a copy of ``rm`` with ``points`` added as temporary nodes, plus their indices.

    Edges are predicted between every new point and every existing node in both
    directions, and between the new points themselves, using the same cutoffs.
    ``roles`` gives ``"start"`` (needs an outgoing edge), ``"goal"`` (needs an
    incoming edge) or ``None`` (needs any edge) per point.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return rm, []
    roles = list(roles) if roles is not None else [None] * len(pts)
    if len(roles) != len(pts):
        raise RoadmapError("one role per attached point is required")
    n = rm.n_nodes
    old_ids = np.arange(n)
    new_ids = np.arange(n, n + len(pts))
    parts = [
        _pair_edges(agent, pts, rm.nodes, new_ids, old_ids, rm.maxdist, rm.maxcost, False),
        _pair_edges(agent, rm.nodes, pts, old_ids, new_ids, rm.maxdist, rm.maxcost, False),
        _pair_edges(agent, pts, pts, new_ids, new_ids, rm.maxdist, rm.maxcost, True),
    ]
    src = np.concatenate([rm.src] + [p[0] for p in parts])
    dst = np.concatenate([rm.dst] + [p[1] for p in parts])
    d = np.concatenate([rm.d_pred] + [p[2] for p in parts])
    c = np.concatenate([rm.c_pred] + [p[3] for p in parts])
    out = Roadmap(np.vstack([rm.nodes, pts]), src, dst, d, c, rm.maxdist, rm.maxcost, rm.digest)
    outdeg = np.bincount(out.src, minlength=out.n_nodes)
    indeg = np.bincount(out.dst, minlength=out.n_nodes)
    for k, role in zip(new_ids, roles):
        if role == "start" and outdeg[k] == 0:
            raise IsolatedEndpoint(f"start {tuple(out.nodes[k])} has no outgoing edge")
        if role == "goal" and indeg[k] == 0:
            raise IsolatedEndpoint(f"goal {tuple(out.nodes[k])} has no incoming edge")
        if role is None and outdeg[k] + indeg[k] == 0:
            raise IsolatedEndpoint(f"point {tuple(out.nodes[k])} has no edge")
    return out, new_ids.tolist()


def to_bytes(rm: Roadmap) -> bytes:
    digest = rm.digest.encode("ascii")
    if len(digest) > 64:
        raise RoadmapError("checkpoint digest too long")
    edges = np.empty(rm.n_edges, dtype=_EDGE_DTYPE)
    edges["src"], edges["dst"], edges["d"], edges["c"] = rm.src, rm.dst, rm.d_pred, rm.c_pred
    head = MAGIC + struct.pack("<I", VERSION) + struct.pack("<dd", rm.maxdist, rm.maxcost)
    head += digest.ljust(64, b"\0") + struct.pack("<QQ", rm.n_nodes, rm.n_edges)
    return head + rm.nodes.astype("<f8").tobytes() + edges.tobytes()


def from_bytes(data: bytes) -> Roadmap:
    if len(data) < 8 or data[:4] != MAGIC:
        raise RoadmapError("not a roadmap file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise RoadmapError(f"unsupported roadmap version {version}")
    fixed = 8 + 16 + 64 + 16
    if len(data) < fixed:
        raise RoadmapError("truncated roadmap header")
    maxdist, maxcost = struct.unpack("<dd", data[8:24])
    digest = data[24:88].rstrip(b"\0").decode("ascii")
    n_nodes, n_edges = struct.unpack("<QQ", data[88:104])
    need = fixed + 16 * n_nodes + _EDGE_DTYPE.itemsize * n_edges
    if len(data) != need:
        raise RoadmapError(f"roadmap file has {len(data)} bytes, expected {need}")
    nodes = np.frombuffer(data, dtype="<f8", count=2 * n_nodes, offset=fixed).reshape(-1, 2)
    edges = np.frombuffer(data, dtype=_EDGE_DTYPE, count=n_edges, offset=fixed + 16 * n_nodes)
    return Roadmap(nodes, edges["src"], edges["dst"], edges["d"], edges["c"], maxdist, maxcost, digest)


def save(rm: Roadmap, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(rm))


def load(path: str | Path) -> Roadmap:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise RoadmapError(f"cannot read roadmap {path}: {exc}") from exc
    return from_bytes(data)
