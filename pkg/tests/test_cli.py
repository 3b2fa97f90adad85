import json

import pytest

from safenav import cli, roadmap
from safenav.cli import main
from safenav.gcrl import Checkpoint

TINY_CFG = """
# small settings for fast runs
seed = 3
[train]
iterations = 300
finetune_iterations = 60
initial_collect = 200
hidden = 32
batch_size = 32
eval_interval = 150
eval_episodes = 3
log_interval = 100
sample_population = 32
sample_k = 8
[roadmap]
nodes = 60
max_dist = 12.0
max_cost = 40.0
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    c = ["--config", str(cfg)]
    assert main(["train", *c, "--out", str(d / "a.snav"), "--metrics", str(d / "m.csv")]) == 0
    assert main(["finetune", *c, "--ckpt", str(d / "a.snav"), "--out", str(d / "b.snav"),
                 "--metrics", str(d / "mf.csv"), "--lagrange-log", str(d / "lag.csv")]) == 0
    assert main(["build-graph", *c, "--ckpt", str(d / "b.snav"), "--out", str(d / "g.snrg")]) == 0
    return d, c


def test_parse_config_sections():
    s = cli.parse_config_text("seed = 4\n[planner]\nalpha = 2.5 # comment\n\n[bench]\ntrials=7\n")
    assert s == {"run": {"seed": "4"}, "planner": {"alpha": "2.5"}, "bench": {"trials": "7"}}
    cfg = cli.apply_settings(cli.RunConfig(), s)
    assert cfg.seed == 4 and cfg.planner.alpha == 2.5 and cfg.bench.trials == 7


@pytest.mark.parametrize("text", ["[nowhere]\nx = 1\n", "[planner]\nspeed = 1\n", "bogus = 2\n",
                                  "[bench]\ntrials = many\n", "[train]\nrelabel = maybe\n",
                                  "[train]\nactor_lr = 0\n", "just words\n"])
def test_bad_config_is_usage_error(tmp_path, text, capsys):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    assert main(["train", "--config", str(p), "--iters", "0", "--out", str(tmp_path / "x.snav"),
                 "--out-dir", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_precedence_and_echo(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SNAV_SEED", "11")
    out = tmp_path / "z.snav"
    assert main(["train", "--iters", "0", "--out", str(out), "--out-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "(seed 11)" in text and "#   [train]" in text and "#   iterations = 0" in text
    assert Checkpoint.load(out).config.seed == 11
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 12\n")
    d = ["--out-dir", str(tmp_path)]
    main(["train", "--config", str(cfg), "--iters", "0", "--out", str(out), *d])
    assert "(seed 12)" in capsys.readouterr().out
    main(["train", "--config", str(cfg), "--seed", "13", "--iters", "0", "--out", str(out), *d])
    assert "(seed 13)" in capsys.readouterr().out


def test_zero_iterations_writes_header_only(tmp_path):
    assert main(["train", "--iters", "0", "--out", str(tmp_path / "a.snav"),
                 "--metrics", str(tmp_path / "m.csv")]) == 0
    assert (tmp_path / "m.csv").read_text().strip().split(",")[0] == "iter"
    assert not Checkpoint.load(tmp_path / "a.snav").trained


def test_usage_errors(tmp_path, capsys):
    assert main(["finetune", "--out-dir", str(tmp_path)]) == 2
    assert main(["finetune", "--ckpt", str(tmp_path / "missing.snav"), "--out-dir", str(tmp_path)]) == 2
    assert main(["fly"]) == 2
    assert main(["plan", "--problems", "p.json"]) == 2
    capsys.readouterr()


def test_untrained_checkpoint_is_rejected(tmp_path):
    main(["train", "--iters", "0", "--out", str(tmp_path / "a.snav"), "--out-dir", str(tmp_path)])
    assert main(["finetune", "--ckpt", str(tmp_path / "a.snav"), "--out-dir", str(tmp_path)]) == 4
    assert main(["build-graph", "--ckpt", str(tmp_path / "a.snav"), "--out", str(tmp_path / "g")]) == 4


def test_metrics_and_graph_outputs(pipeline):
    d, _ = pipeline
    assert (d / "m.csv").read_text().splitlines()[0].startswith("iter,actor_loss")
    assert (d / "lag.csv").read_text().splitlines()[0] == "iter,j_hat,lambda"
    rm = roadmap.load(d / "g.snrg")
    assert rm.digest == Checkpoint.load(d / "b.snav").digest and rm.n_edges > 0


def test_plan_run_plot(pipeline, capsys):
    d, c = pipeline
    probs = d / "p.json"
    probs.write_text(json.dumps([{"id": 0, "start": [5, 5], "goal": [12, 9]},
                                 {"id": 1, "start": [12, 5], "goal": [5, 9]}]))
    assert main(["plan", *c, "--ckpt", str(d / "b.snav"), "--graph", str(d / "g.snrg"),
                 "--problems", str(probs), "--out", str(d / "plan.json")]) == 0
    doc = json.loads((d / "plan.json").read_text())
    assert doc["mode"] == "blend" and len(doc["paths"]) == 2
    assert main(["run", *c, "--ckpt", str(d / "b.snav"), "--plan", str(d / "plan.json"),
                 "--graph", str(d / "g.snrg"), "--out", str(d / "t.csv")]) == 0
    assert main(["plot", "--traj", str(d / "t.csv"), "--out", str(d / "t.svg")]) == 0
    assert (d / "t.svg").read_text().count("<polyline") == 2
    capsys.readouterr()


def test_digest_mismatch_needs_force(pipeline, tmp_path, capsys):
    d, c = pipeline
    probs = d / "p1.json"
    probs.write_text(json.dumps([{"id": 0, "start": [5, 5], "goal": [9, 6]}]))
    assert main(["plan", *c, "--ckpt", str(d / "b.snav"), "--graph", str(d / "g.snrg"),
                 "--problems", str(probs), "--out", str(d / "plan1.json")]) == 0
    other = tmp_path / "other.snrg"
    roadmap.save(roadmap.from_checkpoint(Checkpoint.load(d / "b.snav"), seed=99, n_nodes=30), other)
    capsys.readouterr()
    args = ["run", *c, "--ckpt", str(d / "b.snav"), "--plan", str(d / "plan1.json"), "--graph", str(other),
            "--out", str(tmp_path / "t.csv")]
    assert main(args) == 4
    assert "warning" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0
    assert "warning" in capsys.readouterr().err
    # a graph from the first-phase checkpoint does not match the fine-tuned one
    assert main(["plan", *c, "--ckpt", str(d / "a.snav"), "--graph", str(d / "g.snrg"),
                 "--problems", str(probs), "--out", str(tmp_path / "x.json")]) == 4


def test_infeasible_plan_exit_code(pipeline, capsys):
    d, c = pipeline
    probs = d / "bad.json"
    probs.write_text(json.dumps([{"id": 0, "start": [5, 5], "goal": [12, 9]},
                                 {"id": 1, "start": [5.2, 5], "goal": [12, 12]}]))
    assert main(["plan", *c, "--ckpt", str(d / "b.snav"), "--graph", str(d / "g.snrg"),
                 "--problems", str(probs), "--out", str(d / "x.json")]) == 3
    assert "infeasible" in capsys.readouterr().err


def test_bench_command(pipeline, capsys):
    d, c = pipeline
    out = d / "bench"
    assert main(["bench", *c, "--ckpt", str(d / "b.snav"), "--graph", str(d / "g.snrg"),
                 "--difficulty", "easy", "--agents", "2", "--trials", "2", "--method", "all",
                 "--out-dir", str(out), "--workers", "2"]) == 0
    text = capsys.readouterr().out
    assert text.count("N/A") == 2
    assert (out / "summary.csv").exists() and (out / "results.csv").exists()
    first = (out / "results.csv").read_bytes()
    assert main(["bench", *c, "--ckpt", str(d / "b.snav"), "--graph", str(d / "g.snrg"),
                 "--difficulty", "easy", "--agents", "2", "--trials", "2", "--out-dir", str(out)]) == 0
    assert (out / "results.csv").read_bytes() == first


def test_plot_malformed(tmp_path, capsys):
    bad = tmp_path / "t.csv"
    bad.write_text("x,y\n1,2\n")
    assert main(["plot", "--traj", str(bad), "--out", str(tmp_path / "t.svg")]) == 2
    assert main(["plot", "--traj", str(tmp_path / "none.csv")]) == 2
    capsys.readouterr()
