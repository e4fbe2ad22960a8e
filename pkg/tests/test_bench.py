import json

import numpy as np
import pytest
from pydantic import ValidationError

from itrca import bench
from itrca.bench import (
    BenchInterrupted,
    ExperimentConfig,
    MisalignedError,
    aggregate,
    binomial_stderr,
    run_experiment,
    run_trial,
    run_trials,
    topk_hit,
    topk_recall,
)

SMALL = dict(n_nodes=12, anomaly_strengths=[2.0, 3.0], trials_per_point=6, seed=3, timing=False)


class TestTopK:
    groups = [["a"], ["b", "c", "d"], ["e"]]

    def test_with_ties(self, rng):
        assert topk_hit(self.groups, "a", 1, "with_ties", rng)
        assert not topk_hit(self.groups, "c", 1, "with_ties", rng)
        # the tie group starts at position 2, so all of it counts for k = 2
        assert topk_hit(self.groups, "d", 2, "with_ties", rng)
        assert not topk_hit(self.groups, "e", 2, "with_ties", rng)

    def test_random_among_ties_takes_exactly_k(self):
        rng = np.random.default_rng(0)
        hits = [topk_hit(self.groups, "c", 2, "random_among_ties", rng) for _ in range(3000)]
        assert np.mean(hits) == pytest.approx(1 / 3, abs=0.03)
        assert topk_hit(self.groups, "e", 5, "random_among_ties", rng)

    def test_missing_truth(self, rng):
        assert not topk_hit(self.groups, "z", 5, "with_ties", rng)

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            topk_hit(self.groups, "a", 1, "optimistic", rng)

    def test_recall(self, rng):
        assert topk_recall([self.groups, self.groups], ["a", "e"], 1, "with_ties", rng) == 0.5
        with pytest.raises(MisalignedError):
            topk_recall([self.groups], ["a", "b"], 1, "with_ties", rng)


def test_binomial_stderr():
    assert binomial_stderr(0.5, 100) == pytest.approx(0.05)
    assert binomial_stderr(1.0, 10) == 0.0


class TestConfig:
    def test_unknown_method(self):
        with pytest.raises(ValidationError, match="valid methods"):
            ExperimentConfig(methods=["magic"])

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(trials=3)

    def test_single_shd_knob(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(shd_perturbation=2, shd_fraction=0.5)

    def test_from_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(SMALL))
        assert ExperimentConfig.from_file(path).n_nodes == 12

    def test_committed_config_loads(self):
        from pathlib import Path

        cfg = ExperimentConfig.from_file(Path(__file__).parents[1] / "configs" / "recall_vs_strength.json")
        assert cfg.anomaly_strengths == [2.0, 2.5, 3.0]


class TestRunner:
    def test_deterministic_without_timing(self):
        cfg = ExperimentConfig(**SMALL)
        assert run_experiment(cfg).to_json() == run_experiment(cfg).to_json()

    def test_paired_across_strengths(self):
        cfg = ExperimentConfig(**SMALL)
        a = run_trial(cfg, 2.0, 4)
        b = run_trial(cfg, 3.0, 4)
        assert (a.root_cause, a.target) == (b.root_cause, b.target)

    def test_target_descends_from_root(self):
        from itrca.graph import descendants
        from itrca.scm import sample_random_scm

        cfg = ExperimentConfig(**SMALL)
        for t in range(6):
            rec = run_trial(cfg, 3.0, t)
            ss = np.random.SeedSequence([cfg.seed, t]).spawn(3)[0]
            scm = sample_random_scm(cfg.scm_config(), np.random.default_rng(ss))
            assert rec.target in descendants(scm.dag, rec.root_cause)

    def test_report_contents(self, tmp_path):
        cfg = ExperimentConfig(**SMALL)
        log = tmp_path / "trials.jsonl"
        report = run_experiment(cfg, trial_log=log)
        assert report.n_trials == 12 and report.failures == 0
        assert len(log.read_text().splitlines()) == 12
        assert len(report.rows) == 2 * 3 * 2 * 2
        row = report.recall("smooth_traversal", 3.0, 1, "with_ties")
        assert 0 <= row.recall <= 1 and row.n_trials == 6 and row.mean_runtime_ms is None
        assert {c.strength for c in report.coverage} == {2.0, 3.0}
        header = report.to_csv().splitlines()[0]
        assert header == "method,strength,k,tie_mode,recall,stderr,mean_runtime_ms"
        assert "smooth_traversal" in report.summary()

    def test_timing_recorded(self):
        report = run_experiment(ExperimentConfig(**{**SMALL, "timing": True, "trials_per_point": 2}))
        assert all(r.mean_runtime_ms is not None and r.mean_runtime_ms >= 0 for r in report.rows)

    def test_failures_recorded_not_dropped(self):
        # a 12-node graph cannot reach SHD 500
        cfg = ExperimentConfig(**{**SMALL, "shd_perturbation": 500})
        report = run_experiment(cfg)
        assert report.failures == 12
        assert all(r.n_trials == 0 and r.failures == 6 for r in report.rows)

    def test_shd_fraction(self):
        cfg = ExperimentConfig(**{**SMALL, "shd_fraction": 0.5, "anomaly_strengths": [3.0]})
        recs = run_trials(cfg)
        assert all(r.error is None and r.shd is not None for r in recs)

    def test_workers_match_serial(self):
        cfg = ExperimentConfig(**{**SMALL, "trials_per_point": 3})
        serial = aggregate(cfg, run_trials(cfg)).to_json()
        parallel = aggregate(cfg, run_trials(cfg.model_copy(update={"workers": 2}))).to_json()
        assert json.loads(serial)["rows"] == json.loads(parallel)["rows"]

    def test_interrupt_keeps_partial(self, monkeypatch):
        real = bench.run_trial
        calls = []

        def flaky(*args):
            calls.append(args)
            if len(calls) == 4:
                raise KeyboardInterrupt
            return real(*args)

        monkeypatch.setattr(bench, "run_trial", flaky)
        with pytest.raises(BenchInterrupted) as err:
            run_experiment(ExperimentConfig(**SMALL))
        assert err.value.report.n_trials == 3
