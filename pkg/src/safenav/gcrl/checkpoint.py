"""Binary checkpoint container.

Layout: ``b"SNAV"``, u32 format version, u32 header length, a JSON header
(config, config digest, map, scalars and an array directory) and the raw
little-endian array payload.  The checkpoint digest is the SHA-256 of the whole
serialized file, so any parameter change alters it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from safenav import envsim
from safenav.gcrl.agent import Agent, CategoricalCritic, Encoder, TrainConfig
from safenav.gcrl.buffer import ReplayBuffer
from safenav.gcrl.categorical import AtomGrid
from safenav.tinynn import DenseNet, OptimState

MAGIC = b"SNAV"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(cfg: TrainConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    """Both training phases plus the replay buffer.

    ``unconstrained`` is frozen at the end of the first phase and is the source
    of roadmap predictions; ``constrained`` is the fine-tuned agent (``None``
    until fine-tuning has run).
    """

    config: TrainConfig
    map: envsim.Map
    unconstrained: Agent
    constrained: Agent | None
    buffer: ReplayBuffer
    iterations: tuple[int, int] = (0, 0)

    @property
    def trained(self) -> bool:
        return self.iterations[0] > 0

    @property
    def safe_agent(self) -> Agent:
        return self.constrained if self.constrained is not None else self.unconstrained

    def to_bytes(self) -> bytes:
        arrays: dict[str, np.ndarray] = {}
        agents = {}
        for name, agent in (("unconstrained", self.unconstrained), ("constrained", self.constrained)):
            if agent is None:
                continue
            agents[name] = _pack_agent(agent, name, arrays)
        for k, v in self.buffer.to_arrays().items():
            arrays[f"buffer/{k}"] = v
        directory, chunks, offset = [], [], 0
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            directory.append([name, arr.dtype.str.lstrip("<>|="), list(arr.shape), offset, len(data)])
            chunks.append(data)
            offset += len(data)
        header = {
            "config": dataclasses.asdict(self.config),
            "config_digest": config_digest(self.config),
            "map": self.map.to_dict(),
            "map_name": self.map.name,
            "iterations": list(self.iterations),
            "buffer_capacity": self.buffer.capacity,
            "agents": agents,
            "arrays": directory,
        }
        hb = json.dumps(header, sort_keys=True).encode()
        return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + b"".join(chunks)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path: str | Path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < 12 or data[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<II", data[4:12])
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if len(data) < 12 + hlen:
            raise CheckpointError("truncated checkpoint header")
        try:
            return cls._decode(data, hlen)
        except (ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc

    @classmethod
    def _decode(cls, data: bytes, hlen: int) -> "Checkpoint":
        header = json.loads(data[12:12 + hlen])
        payload = memoryview(data)[12 + hlen:]
        arrays = {}
        for name, dtype, shape, offset, nbytes in header["arrays"]:
            if offset + nbytes > len(payload):
                raise CheckpointError(f"truncated checkpoint payload at {name}")
            dt = np.dtype(dtype).newbyteorder("<")
            arrays[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=dt).reshape(shape).astype(
                np.dtype(dtype), copy=True)
        cfg = TrainConfig(**header["config"])
        m = envsim.Map.from_dict(header["map"], name=header.get("map_name", "custom"))
        agents = {name: _unpack_agent(meta, name, arrays) for name, meta in header["agents"].items()}
        buf = ReplayBuffer.from_arrays(
            header["buffer_capacity"],
            {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("buffer/")})
        return cls(cfg, m, agents["unconstrained"], agents.get("constrained"), buf,
                   tuple(header["iterations"]))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(data)


def _pack_net(net: DenseNet, prefix: str, arrays: dict) -> dict:
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}/W{i}"] = w
        arrays[f"{prefix}/b{i}"] = b
    return {"sizes": net.sizes, "head": net.head}


def _unpack_net(meta: dict, prefix: str, arrays: dict) -> DenseNet:
    n = len(meta["sizes"]) - 1
    return DenseNet(list(meta["sizes"]), [arrays[f"{prefix}/W{i}"] for i in range(n)],
                    [arrays[f"{prefix}/b{i}"] for i in range(n)], meta["head"])


def _pack_opt(opt: OptimState, prefix: str, arrays: dict) -> dict:
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays[f"{prefix}/m{i}"] = m
        arrays[f"{prefix}/v{i}"] = v
    return {"lr": opt.lr, "t": opt.t, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "n": len(opt.m)}


def _unpack_opt(meta: dict, prefix: str, arrays: dict) -> OptimState:
    n = meta["n"]
    return OptimState(meta["lr"], [arrays[f"{prefix}/m{i}"] for i in range(n)],
                      [arrays[f"{prefix}/v{i}"] for i in range(n)], meta["t"],
                      meta["beta1"], meta["beta2"], meta["eps"])


def _pack_critic(c: CategoricalCritic, prefix: str, arrays: dict) -> dict:
    return {"net": _pack_net(c.net, f"{prefix}/net", arrays),
            "target": _pack_net(c.target_net, f"{prefix}/target", arrays),
            "opt": _pack_opt(c.opt, f"{prefix}/opt", arrays),
            "grid": [c.grid.v_min, c.grid.v_max, c.grid.n_atoms]}


def _unpack_critic(meta: dict, prefix: str, arrays: dict) -> CategoricalCritic:
    v_min, v_max, n = meta["grid"]
    return CategoricalCritic(_unpack_net(meta["net"], f"{prefix}/net", arrays),
                             _unpack_net(meta["target"], f"{prefix}/target", arrays),
                             AtomGrid(v_min, v_max, int(n)),
                             _unpack_opt(meta["opt"], f"{prefix}/opt", arrays))


def _pack_agent(agent: Agent, prefix: str, arrays: dict) -> dict:
    return {
        "actor": _pack_net(agent.actor, f"{prefix}/actor", arrays),
        "actor_target": _pack_net(agent.actor_target, f"{prefix}/actor_target", arrays),
        "actor_opt": _pack_opt(agent.actor_opt, f"{prefix}/actor_opt", arrays),
        "dist": _pack_critic(agent.dist, f"{prefix}/dist", arrays),
        "cost": _pack_critic(agent.cost, f"{prefix}/cost", arrays),
        "encoder": {"center": agent.encoder.center.tolist(), "half_extent": agent.encoder.half_extent,
                    "offset_scale": agent.encoder.offset_scale},
        "lagrange": agent.lagrange,
        "phase": agent.phase,
        "updates": agent.updates,
    }


def _unpack_agent(meta: dict, prefix: str, arrays: dict) -> Agent:
    enc = meta["encoder"]
    return Agent(
        actor=_unpack_net(meta["actor"], f"{prefix}/actor", arrays),
        actor_target=_unpack_net(meta["actor_target"], f"{prefix}/actor_target", arrays),
        actor_opt=_unpack_opt(meta["actor_opt"], f"{prefix}/actor_opt", arrays),
        dist=_unpack_critic(meta["dist"], f"{prefix}/dist", arrays),
        cost=_unpack_critic(meta["cost"], f"{prefix}/cost", arrays),
        encoder=Encoder(np.array(enc["center"]), enc["half_extent"], enc["offset_scale"]),
        lagrange=meta["lagrange"],
        phase=meta["phase"],
        updates=meta["updates"],
    )
