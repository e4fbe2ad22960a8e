import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest

from itrca import __version__
from itrca.cli import main
from itrca.graph import CausalDag, structural_hamming_distance


@pytest.fixture
def sim(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--nodes", "10", "--seed", "5", "--samples", "200", "--out", str(out)]) == 0
    return out


def run_json(capsys, argv):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out) if code == 0 else None


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_simulate_files_and_determinism(sim, tmp_path):
    assert sorted(p.name for p in sim.iterdir()) == ["anomalous.csv", "normal.csv", "scm.json", "truth.json"]
    again = tmp_path / "again"
    main(["simulate", "--nodes", "10", "--seed", "5", "--samples", "200", "--out", str(again)])
    for name in ("anomalous.csv", "normal.csv", "scm.json", "truth.json"):
        assert (sim / name).read_bytes() == (again / name).read_bytes()
    assert len((sim / "normal.csv").read_text().splitlines()) == 201


def test_score_then_analyze(sim, capsys, tmp_path):
    scores_path = tmp_path / "scores.json"
    assert main(["score", "--data", str(sim / "normal.csv"), "--anomalous", str(sim / "anomalous.csv"),
                 "--out", str(scores_path)]) == 0
    scores = json.loads(scores_path.read_text())
    assert set(scores) == {"scores", "k"} and scores["k"] == 201
    target = json.loads((sim / "truth.json").read_text())["target"]

    code, out = run_json(capsys, ["analyze", "--method", "smooth-traversal", "--scores", str(scores_path),
                                  "--graph", str(sim / "scm.json"), "--target", target])
    assert code == 0 and out["chosen"] in scores["scores"]

    code, out = run_json(capsys, ["analyze", "--method", "score_ordering", "--scores", str(scores_path),
                                  "--dmax", "2"])
    assert code == 0 and 1 <= out["k"] <= 10

    code, out = run_json(capsys, ["analyze", "--method", "score-ordering", "--scores", str(scores_path),
                                  "--dmax-values", "1,2,3", "--top-k", "2"])
    assert code == 0 and set(out["confidence"]) == {"1", "2", "3"}

    code, out = run_json(capsys, ["analyze", "--method", "classic-traversal", "--data", str(sim / "normal.csv"),
                                  "--anomalous", str(sim / "anomalous.csv"), "--graph", str(sim / "scm.json"),
                                  "--target", target])
    assert code == 0 and out["method"] == "classic_traversal"


@pytest.mark.parametrize("extra", [
    ["--method", "smooth-traversal"],
    ["--method", "classic-traversal", "--graph", "g.json"],
    ["--method", "score-ordering"],
    ["--method", "unknown"],
])
def test_analyze_usage_errors(sim, extra, capsys):
    assert main(["analyze", "--scores", str(sim / "truth.json"), *extra]) == 2
    assert "error" in capsys.readouterr().err


def test_malformed_data_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,oops\n")
    assert main(["score", "--data", str(bad)]) == 1
    assert main(["score", "--data", str(tmp_path / "missing.csv")]) == 1


def test_unknown_target_exits_nonzero(sim, tmp_path):
    scores_path = tmp_path / "s.json"
    main(["score", "--data", str(sim / "normal.csv"), "--anomalous", str(sim / "anomalous.csv"),
          "--out", str(scores_path)])
    assert main(["analyze", "--method", "smooth-traversal", "--scores", str(scores_path),
                 "--graph", str(sim / "scm.json"), "--target", "nope"]) != 0


def test_perturb(sim, tmp_path, capsys):
    out = tmp_path / "p.json"
    assert main(["perturb", "--graph", str(sim / "scm.json"), "--shd", "2", "--seed", "1", "--out", str(out)]) == 0
    original = CausalDag.from_dict(json.loads((sim / "scm.json").read_text())["dag"])
    assert structural_hamming_distance(original, CausalDag.from_json(out)) == 2
    # a well-formed request the graph cannot satisfy is a runtime failure
    assert main(["perturb", "--graph", str(sim / "scm.json"), "--shd", "999"]) == 1


def test_simulate_rejects_zero_nodes(tmp_path, capsys):
    assert main(["simulate", "--nodes", "0", "--out", str(tmp_path)]) == 2
    assert "positive" in capsys.readouterr().err


def test_bench(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_nodes": 10, "anomaly_strengths": [3.0], "trials_per_point": 4, "seed": 1}))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["bench", "--config", str(cfg), "--out", str(a), "--no-timing", "--log", str(a / "t.jsonl")]) == 0
    assert "smooth_traversal" in capsys.readouterr().out
    assert main(["bench", "--config", str(cfg), "--out", str(b), "--no-timing"]) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert len((a / "t.jsonl").read_text().splitlines()) == 4


def test_bench_bad_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"methods": ["oracle"]}))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("{not json")
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_bench_interrupt_writes_partial(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_nodes": 50, "trials_per_point": 100000, "anomaly_strengths": [3.0]}))
    out = tmp_path / "out"
    env = {**os.environ, "PYTHONPATH": str(Path(__file__).parents[1] / "src")}
    proc = subprocess.Popen([sys.executable, "-m", "itrca.cli", "bench", "--config", str(cfg), "--out", str(out)],
                            stderr=subprocess.PIPE, env=env)
    deadline = time.time() + 60
    while not out.exists() and time.time() < deadline:
        time.sleep(0.1)
    time.sleep(2.0)
    proc.send_signal(signal.SIGINT)
    _, err = proc.communicate(timeout=60)
    assert proc.returncode == 1, err.decode()
    partial = json.loads((out / "metrics.partial.json").read_text())
    assert partial["n_trials"] >= 1
    assert (out / "metrics.partial.csv").exists()
