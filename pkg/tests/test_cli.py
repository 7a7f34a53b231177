import subprocess
import sys

import pydot
import pytest

from modrl.cli import main

GRID = "configs/dqn_gridworld.json"
MEMORY = "configs/prioritized_memory.json"


def test_bench_build_reports_both_phases(capsys):
    assert main(["bench-build", "--config", MEMORY]) == 0
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert float(out["meta_graph_seconds"]) > 0 and float(out["build_seconds"]) > 0
    assert int(out["component_count"]) == 2


def test_export_dot(tmp_path, capsys):
    path = tmp_path / "agent.dot"
    assert main(["export-dot", "--config", GRID, "--out", str(path)]) == 0
    graph = pydot.graph_from_dot_file(str(path))[0]

    def nodes(g):
        own = [n for n in g.get_nodes() if n.get_name() not in ("node", "edge", "graph")]
        return own + [n for s in g.get_subgraphs() for n in nodes(s)]

    main(["bench-build", "--config", GRID])
    stats = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert len(nodes(graph)) == int(stats["component_count"])


def test_unknown_verb():
    proc = subprocess.run([sys.executable, "-m", "modrl", "fly", "--config", GRID], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage:" in proc.stderr


def test_missing_config_is_scoped_error(capsys):
    assert main(["train", "--config", "/nonexistent.json"]) != 0
    assert "modrl train: error" in capsys.readouterr().err


def test_bad_override(capsys):
    assert main(["bench-build", "--config", GRID, "--set", "update.gamma=2"]) != 0
    assert "gamma" in capsys.readouterr().err


def test_train_metrics(tmp_path, capsys):
    out = tmp_path / "metrics.csv"
    assert main(["train", "--config", GRID, "--seed", "1", "--out", str(out),
                 "--set", "train.steps=300", "--set", "train.log_interval=100"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t_seconds,frames_total,fps,updates,loss,mean_return"
    assert [line.split(",")[1] for line in lines[1:]] == ["100", "200", "300"]


def test_train_distributed(capsys):
    assert main(["train-distributed", "--config", GRID, "--set", "runner.budget=300",
                 "--set", "runner.workers=2"]) == 0
    assert capsys.readouterr().out.splitlines()[-1].split(",")[1] == "300"


def test_bench_act(capsys):
    assert main(["bench-act", "--config", GRID, "--batch-sizes", "1,8", "--frames", "64"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("batch_size,actions_per_sec")
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "8"]


@pytest.mark.parametrize("backend", [None, "define_by_run"])
def test_test_component(backend, capsys):
    argv = ["test-component", "--config", MEMORY] + (["--backend", backend] if backend else [])
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "get_records" in out
    if backend is None:
        assert "backend max rel diff: 0" in out


def test_test_component_needs_component_config(capsys):
    assert main(["test-component", "--config", GRID]) != 0
