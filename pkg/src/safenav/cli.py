"""Command-line entry point: ``safenav <train|finetune|build-graph|plan|run|bench|plot>``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from safenav import bench, envsim, executor, oracle, plot, roadmap
from safenav.gcrl import Checkpoint, CheckpointError, TrainConfig, finetune, train
from safenav.mapf import AgentTask, BudgetExceeded, Infeasible, MapfProblem, cbs
from safenav.mapf.cbs import CBS_BUDGET, RHO_CONFLICT

log = logging.getLogger("safenav")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_CONSISTENCY = 0, 2, 3, 4


class UsageError(Exception):
    pass


class ConsistencyError(Exception):
    pass


class InfeasibleError(Exception):
    pass


@dataclass
class RoadmapParams:
    nodes: int = roadmap.DEFAULT_NODES
    max_dist: float = roadmap.DEFAULT_MAXDIST
    max_cost: float = roadmap.DEFAULT_MAXCOST
    clearance: float = roadmap.DEFAULT_CLEARANCE


@dataclass
class PlannerParams:
    mode: str = "blend"
    alpha: float = 1.0
    rho_conflict: float = RHO_CONFLICT
    cbs_budget: int = CBS_BUDGET


@dataclass
class ExecutorParams:
    eps_wp: float = executor.EPS_WP
    rho_agent: float = executor.RHO_AGENT


@dataclass
class BenchParams:
    method: str = "all"
    difficulty: str = "hard"
    agents: int = 1
    trials: int = bench.DEFAULT_TRIALS
    workers: int = 1


@dataclass
class RunConfig:
    map: str = "central_obstacle"
    seed: int = 0
    out_dir: str = "."
    train: TrainConfig = field(default_factory=TrainConfig)
    roadmap: RoadmapParams = field(default_factory=RoadmapParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    executor: ExecutorParams = field(default_factory=ExecutorParams)
    bench: BenchParams = field(default_factory=BenchParams)


SECTIONS = ("train", "roadmap", "planner", "executor", "bench")
TOP_KEYS = ("map", "seed", "out_dir")


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    try:
        return type(like)(value)
    except ValueError as exc:
        raise UsageError(f"cannot parse {value!r} as {type(like).__name__}") from exc


def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    """Flat ``key = value`` lines grouped under ``[section]`` headers; ``#`` starts a comment.

    Keys before any header belong to the ``run`` section.
    """
    out: dict[str, dict[str, str]] = {"run": {}}
    section = "run"
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS + ("run",):
                raise UsageError(f"line {n}: unknown config section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise UsageError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out.setdefault(section, {})[k] = v
    return out


def apply_settings(cfg: RunConfig, settings: dict[str, dict[str, str]]) -> RunConfig:
    for section, kv in settings.items():
        set_keys(cfg, section, kv)
    return cfg


def set_key(cfg: RunConfig, section: str, key: str, value) -> None:
    set_keys(cfg, section, {key: value})


def set_keys(cfg: RunConfig, section: str, kv: dict) -> None:
    """Apply several keys of one section together so cross-field checks see the final values."""
    if section == "run":
        for key, value in kv.items():
            if key not in TOP_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(value, getattr(cfg, key)) if isinstance(value, str) else value)
        return
    if section not in SECTIONS:
        raise UsageError(f"unknown config section {section!r}")
    obj = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(obj)}
    new = {}
    for key, value in kv.items():
        if key not in names:
            raise UsageError(f"unknown config key [{section}] {key!r}")
        new[key] = _coerce(value, getattr(obj, key)) if isinstance(value, str) else value
    try:
        setattr(cfg, section, dataclasses.replace(obj, **new))
    except ValueError as exc:
        raise UsageError(f"invalid value for [{section}]: {exc}") from exc


def render_config(cfg: RunConfig) -> str:
    lines = [f"{k} = {getattr(cfg, k)}" for k in TOP_KEYS]
    for s in SECTIONS:
        lines.append(f"[{s}]")
        for f in dataclasses.fields(getattr(cfg, s)):
            lines.append(f"{f.name} = {getattr(getattr(cfg, s), f.name)}")
    return "\n".join(lines)


# flag dest -> (section, key); the value is applied only when the flag was given
FLAG_KEYS = {
    "map": ("run", "map"), "seed": ("run", "seed"), "out_dir": ("run", "out_dir"),
    "iters": ("train", "iterations"), "ft_iters": ("train", "finetune_iterations"),
    "nodes": ("roadmap", "nodes"), "max_dist": ("roadmap", "max_dist"),
    "max_cost": ("roadmap", "max_cost"), "clearance": ("roadmap", "clearance"),
    "mode": ("planner", "mode"), "alpha": ("planner", "alpha"),
    "rho_conflict": ("planner", "rho_conflict"), "cbs_budget": ("planner", "cbs_budget"),
    "eps_wp": ("executor", "eps_wp"), "rho_agent": ("executor", "rho_agent"),
    "method": ("bench", "method"), "difficulty": ("bench", "difficulty"),
    "agents": ("bench", "agents"), "trials": ("bench", "trials"), "workers": ("bench", "workers"),
}


def resolve_config(args) -> RunConfig:
    """Defaults, then SNAV_SEED, then the config file, then explicit flags."""
    cfg = RunConfig()
    env_seed = os.environ.get("SNAV_SEED")
    if env_seed is not None:
        set_key(cfg, "run", "seed", env_seed)
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        apply_settings(cfg, parse_config_text(text))
    flags: dict[str, dict] = {}
    for dest, (section, key) in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            flags.setdefault(section, {})[key] = v
    apply_settings(cfg, flags)
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def _echo(cfg: RunConfig, command: str) -> None:
    print(f"# safenav {command} (seed {cfg.seed})")
    for line in render_config(cfg).splitlines():
        print(f"#   {line}")


def _load_map(spec: str) -> envsim.Map:
    try:
        return envsim.load_map(spec)
    except (OSError, envsim.MapError, ValueError) as exc:
        raise UsageError(f"cannot load map {spec!r}: {exc}") from exc


def _load_ckpt(path) -> Checkpoint:
    if path is None:
        raise UsageError("--ckpt is required")
    try:
        return Checkpoint.load(path)
    except (OSError, CheckpointError) as exc:
        raise UsageError(str(exc)) from exc


def _load_graph(path) -> roadmap.Roadmap:
    if path is None:
        raise UsageError("--graph is required")
    try:
        return roadmap.load(path)
    except (OSError, roadmap.RoadmapError) as exc:
        raise UsageError(str(exc)) from exc


def _check(ok: bool, msg: str, force: bool) -> None:
    if ok:
        return
    print(f"warning: {msg}", file=sys.stderr)
    if not force:
        raise ConsistencyError(f"{msg} (use --force to continue anyway)")


def _out(cfg: RunConfig, path: str | None, default: str) -> Path:
    p = Path(path) if path else Path(cfg.out_dir) / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _print_metrics(row: dict) -> None:
    parts = [f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()
             if v is not None]
    print(" ".join(parts), flush=True)


def cmd_train(args, cfg: RunConfig) -> int:
    m = _load_map(cfg.map)
    ckpt, tlog = train(cfg.train, m, callback=_print_metrics if args.verbose else None)
    out = _out(cfg, args.out, "checkpoint.snav")
    digest = ckpt.save(out)
    tlog.write_metrics(_out(cfg, args.metrics, "metrics_train.csv"))
    _final_summary(tlog, digest, out)
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig) -> int:
    if args.ckpt is None:
        raise UsageError("finetune requires --ckpt")
    ckpt = _load_ckpt(args.ckpt)
    if not ckpt.trained:
        raise ConsistencyError("checkpoint has no first-phase training")
    tcfg = dataclasses.replace(ckpt.config, finetune_iterations=cfg.train.finetune_iterations)
    out_ck, tlog = finetune(ckpt, tcfg, callback=_print_metrics if args.verbose else None)
    out = _out(cfg, args.out, "checkpoint_ft.snav")
    digest = out_ck.save(out)
    tlog.write_metrics(_out(cfg, args.metrics, "metrics_finetune.csv"))
    tlog.write_lagrange(_out(cfg, args.lagrange_log, "lagrange.csv"))
    _final_summary(tlog, digest, out)
    return EXIT_OK


def _final_summary(tlog, digest: str, out: Path) -> None:
    evals = [r for r in tlog.metrics if r.get("eval_success") is not None]
    if evals:
        print(f"final eval: success={evals[-1]['eval_success']:.3f} cost={evals[-1]['eval_cost']:.3f}")
    print(f"checkpoint {out} sha256 {digest}")


def build_roadmap(ckpt: Checkpoint, params: RoadmapParams, seed: int) -> roadmap.Roadmap:
    return roadmap.from_checkpoint(ckpt, seed, params.nodes, params.max_dist, params.max_cost,
                                   params.clearance)


def cmd_build_graph(args, cfg: RunConfig) -> int:
    ckpt = _load_ckpt(args.ckpt)
    m = _load_map(cfg.map)
    _check(m == ckpt.map, "map differs from the checkpoint's training map", args.force)
    if not ckpt.trained:
        raise ConsistencyError("checkpoint is untrained")
    rm = build_roadmap(ckpt, cfg.roadmap, cfg.seed)
    out = _out(cfg, args.out, "graph.snrg")
    roadmap.save(rm, out)
    print(f"roadmap: {rm.n_nodes} nodes, {rm.n_edges} edges -> {out} sha256 {_file_digest(out)}")
    return EXIT_OK


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_problems(path) -> list[tuple[int, np.ndarray, np.ndarray]]:
    try:
        doc = json.loads(Path(path).read_text())
        probs = [(int(p["id"]), np.array(p["start"], float), np.array(p["goal"], float)) for p in doc]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read problems file {path}: {exc}") from exc
    if len({p[0] for p in probs}) != len(probs):
        raise UsageError("problem ids must be unique")
    return probs


def cmd_plan(args, cfg: RunConfig) -> int:
    ckpt = _load_ckpt(args.ckpt)
    rm = _load_graph(args.graph)
    _check(rm.digest == ckpt.digest, "roadmap was built from a different checkpoint", args.force)
    probs = _read_problems(args.problems)
    for _, s, g in probs:
        if not (ckpt.map.in_bounds(s) and ckpt.map.in_bounds(g)):
            raise UsageError("problem endpoints must lie inside the map")
    mode = roadmap.EdgeMode.parse(cfg.planner.mode, cfg.planner.alpha)
    pts = [p for _, s, g in probs for p in (s, g)]
    try:
        grm, idx = roadmap.attach_endpoints(rm, ckpt.unconstrained, pts, ["start", "goal"] * len(probs))
        tasks = [AgentTask(aid, idx[2 * k], idx[2 * k + 1]) for k, (aid, _, _) in enumerate(probs)]
        plan = cbs(grm, MapfProblem(tasks, mode, cfg.planner.rho_conflict), budget=cfg.planner.cbs_budget)
    except (roadmap.IsolatedEndpoint, Infeasible, BudgetExceeded) as exc:
        raise InfeasibleError(str(exc)) from exc
    doc = plan.to_json(grm, _file_digest(args.graph))
    doc["checkpoint_digest"] = rm.digest
    out = _out(cfg, args.out, "plan.json")
    out.write_text(json.dumps(doc, indent=1))
    print(f"plan: {len(probs)} agents, sum of costs {plan.sum_of_costs:.4f}, makespan {plan.makespan} -> {out}")
    return EXIT_OK


def cmd_run(args, cfg: RunConfig) -> int:
    ckpt = _load_ckpt(args.ckpt)
    try:
        doc = json.loads(Path(args.plan).read_text())
        plans = {int(p["id"]): np.array([w[:2] for w in p["waypoints"]], float) for p in doc["paths"]}
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read plan {args.plan}: {exc}") from exc
    if args.graph is not None:
        _check(doc.get("graph_digest") == _file_digest(args.graph),
               "plan was made on a different roadmap", args.force)
    agent = ckpt.safe_agent if args.policy == "constrained" else ckpt.unconstrained
    starts = {i: w[0] for i, w in plans.items()}
    if len(plans) == 1:
        (aid, wps), = plans.items()
        tr, res = executor.follow_single(ckpt.map, agent, wps[0], wps, eps_wp=cfg.executor.eps_wp,
                                         agent_id=aid)
        trajs, metrics = [tr], executor.RunMetrics([res])
    else:
        trajs, metrics = executor.follow_multi(ckpt.map, agent, starts, plans, cfg.executor.rho_agent,
                                               cfg.executor.eps_wp)
    out = _out(cfg, args.out, "trajectory.csv")
    executor.write_trajectories(out, [(args.run_id, trajs)])
    for a in metrics.agents:
        print(f"agent {a.agent_id}: success={int(a.success)} steps={a.steps} cost={a.cum_cost:.4f}")
    print(f"mean cost {metrics.mean_cost:.4f} ± {metrics.std_cost:.4f}, success {100 * metrics.success_rate:.0f}% -> {out}")
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    ckpt = _load_ckpt(args.ckpt)
    methods = bench.MethodId.parse(cfg.bench.method)
    rm = None
    ck_digest = ckpt.digest
    if any(mth.is_search for mth in methods):
        if args.graph is not None:
            rm = _load_graph(args.graph)
            _check(rm.digest == ck_digest, "roadmap was built from a different checkpoint", args.force)
        else:
            rm = build_roadmap(ckpt, cfg.roadmap, cfg.seed)
    diff = oracle.Difficulty.parse(cfg.bench.difficulty)
    rng = bench.problem_rng(cfg.seed, diff, cfg.bench.agents)
    ps = bench.generate_problems(ckpt.map, diff, cfg.bench.agents, cfg.bench.trials, rng,
                                 cfg.executor.rho_agent, seed=cfg.seed)
    bcfg = bench.BenchConfig(cfg.planner.alpha, cfg.planner.rho_conflict, cfg.executor.rho_agent,
                             cfg.executor.eps_wp, cfg.planner.cbs_budget)
    results = [bench.run_method(mth, ps, ckpt, rm, bcfg, workers=cfg.bench.workers, force=True)
               for mth in methods]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(bench.emit_stats(results, out_dir / "summary.csv", out_dir / "results.csv"))
    return EXIT_OK


def cmd_plot(args, cfg: RunConfig) -> int:
    m = _load_map(cfg.map)
    try:
        runs = executor.read_trajectories(args.traj)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"malformed trajectory file {args.traj}: {exc}") from exc
    out = _out(cfg, args.out, "trajectory.svg")
    n = plot.plot_file(m, runs, out, args.run)
    print(f"plotted {n} trajectories -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safenav", description="Safe multi-agent navigation pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file with [section] headers")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--map", help="map file or builtin name")
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--force", action="store_true", help="continue past digest mismatches")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = common(sub.add_parser("train", help="first training phase"))
    sp.add_argument("--iters", type=int)
    sp.add_argument("--out")
    sp.add_argument("--metrics")

    sp = common(sub.add_parser("finetune", help="Lagrangian fine-tuning"))
    sp.add_argument("--ckpt")
    sp.add_argument("--iters", dest="ft_iters", type=int)
    sp.add_argument("--out")
    sp.add_argument("--metrics")
    sp.add_argument("--lagrange-log", dest="lagrange_log")

    sp = common(sub.add_parser("build-graph", help="build the roadmap"))
    sp.add_argument("--ckpt")
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--max-dist", dest="max_dist", type=float)
    sp.add_argument("--max-cost", dest="max_cost", type=float)
    sp.add_argument("--clearance", type=float)
    sp.add_argument("--out")

    sp = common(sub.add_parser("plan", help="CBS plan for a problems file"))
    sp.add_argument("--ckpt")
    sp.add_argument("--graph")
    sp.add_argument("--problems", required=True)
    sp.add_argument("--mode", choices=["distance", "cost", "blend"])
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--rho-conflict", dest="rho_conflict", type=float)
    sp.add_argument("--cbs-budget", dest="cbs_budget", type=int)
    sp.add_argument("--out")

    sp = common(sub.add_parser("run", help="execute a plan"))
    sp.add_argument("--ckpt")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--graph")
    sp.add_argument("--policy", choices=["constrained", "unconstrained"], default="constrained")
    sp.add_argument("--eps-wp", dest="eps_wp", type=float)
    sp.add_argument("--rho-agent", dest="rho_agent", type=float)
    sp.add_argument("--run-id", dest="run_id", default="run0")
    sp.add_argument("--out")

    sp = common(sub.add_parser("bench", help="four-method benchmark"))
    sp.add_argument("--ckpt")
    sp.add_argument("--graph")
    sp.add_argument("--method")
    sp.add_argument("--difficulty", choices=["easy", "medium", "hard"])
    sp.add_argument("--agents", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--clearance", type=float)

    sp = common(sub.add_parser("plot", help="render trajectories to SVG"))
    sp.add_argument("--traj", required=True)
    sp.add_argument("--run")
    sp.add_argument("--out")
    return p


COMMANDS = {"train": cmd_train, "finetune": cmd_finetune, "build-graph": cmd_build_graph,
            "plan": cmd_plan, "run": cmd_run, "bench": cmd_bench, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _echo(cfg, args.command)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConsistencyError, bench.DigestMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
