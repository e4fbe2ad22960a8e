"""Synthetic RCA benchmark: random SCMs, one injected root cause per trial, top-k recall."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .graph import CausalDag, descendants, max_in_degree, perturb_graph
from .rca import classic_traversal_result, group_ties, score_ordering, score_ranking, smooth_traversal
from .scm import ScmConfig, inject_anomaly, sample_normal, sample_random_scm
from .scoring import Dataset, FeatureMap, estimate_scores

log = logging.getLogger(__name__)

METHODS = ("smooth_traversal", "score_ordering", "classic_traversal")
TIE_MODES = ("with_ties", "random_among_ties")
TieMode = Literal["with_ties", "random_among_ties"]


class MisalignedError(ValueError):
    pass


class BenchInterrupted(Exception):
    """Raised on Ctrl-C; carries the report over the trials finished so far."""

    def __init__(self, report: "MetricsReport"):
        super().__init__(f"interrupted after {report.n_trials} trials")
        self.report = report


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_nodes: int = Field(50, ge=1)
    polytree: bool = False
    linear_probability: float = Field(0.2, ge=0, le=1)
    coefficient_range: tuple[float, float] = (-1.0, 1.0)
    anomaly_strengths: list[float] = Field(default_factory=lambda: [3.0], min_length=1)
    trials_per_point: int = Field(100, ge=1)
    normal_samples: int = Field(1000, ge=1)
    methods: list[str] = Field(default_factory=lambda: list(METHODS), min_length=1)
    alpha: float = Field(0.05, gt=0, lt=1)
    # None: use the sampled graph's true maximum in-degree
    d_max: int | None = Field(None, ge=1)
    threshold: float = Field(3.0, ge=0)
    feature: Literal["identity", "z_score", "abs_z_score"] = "abs_z_score"
    injection: Literal["marginal", "noise"] = "marginal"
    parent_mode: Literal["max", "joint"] = "max"
    shd_perturbation: int | None = Field(None, ge=0)
    shd_fraction: float | None = Field(None, ge=0)
    top_k: list[int] = Field(default_factory=lambda: [1, 3], min_length=1)
    seed: int = 0
    timing: bool = True
    workers: int = Field(1, ge=1)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, value: list[str]) -> list[str]:
        bad = [m for m in value if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; valid methods: {', '.join(METHODS)}")
        return value

    @field_validator("top_k")
    @classmethod
    def _positive_k(cls, value: list[int]) -> list[int]:
        if any(k < 1 for k in value):
            raise ValueError("top_k entries must be positive")
        return value

    @model_validator(mode="after")
    def _one_shd_knob(self) -> "ExperimentConfig":
        if self.shd_perturbation is not None and self.shd_fraction is not None:
            raise ValueError("set at most one of shd_perturbation and shd_fraction")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def scm_config(self) -> ScmConfig:
        return ScmConfig(
            n_nodes=self.n_nodes,
            polytree=self.polytree,
            linear_probability=self.linear_probability,
            coefficient_range=tuple(self.coefficient_range),
        )


@dataclass
class TrialRecord:
    strength: float
    trial: int
    root_cause: str | None = None
    target: str | None = None
    rankings: dict[str, list[list[str]]] = field(default_factory=dict)
    runtimes: dict[str, float] = field(default_factory=dict)
    candidate_set: list[str] | None = None
    delta_max: float | None = None
    shd: int | None = None
    error: str | None = None


@dataclass
class MetricRow:
    method: str
    strength: float
    k: int
    tie_mode: str
    recall: float
    stderr: float
    n_trials: int
    failures: int
    mean_runtime_ms: float | None


@dataclass
class CoverageRow:
    strength: float
    coverage: float
    stderr: float
    mean_set_size: float
    n_trials: int


@dataclass
class MetricsReport:
    rows: list[MetricRow]
    coverage: list[CoverageRow]
    failures: int
    n_trials: int
    config: dict

    CSV_FIELDS = ("method", "strength", "k", "tie_mode", "recall", "stderr", "mean_runtime_ms")

    def recall(self, method: str, strength: float, k: int = 1, tie_mode: str = "random_among_ties") -> MetricRow:
        for row in self.rows:
            if (row.method, row.strength, row.k, row.tie_mode) == (method, strength, k, tie_mode):
                return row
        raise KeyError((method, strength, k, tie_mode))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "n_trials": self.n_trials,
            "failures": self.failures,
            "rows": [asdict(r) for r in self.rows],
            "coverage": [asdict(c) for c in self.coverage],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_FIELDS)
        for r in self.rows:
            runtime = "" if r.mean_runtime_ms is None else repr(r.mean_runtime_ms)
            writer.writerow([r.method, repr(r.strength), r.k, r.tie_mode, repr(r.recall), repr(r.stderr), runtime])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'method':<18} {'strength':>8} {'k':>2} {'tie_mode':<18} {'recall':>7} {'stderr':>7} {'ms':>8}"]
        for r in self.rows:
            ms = "-" if r.mean_runtime_ms is None else f"{r.mean_runtime_ms:.3f}"
            lines.append(
                f"{r.method:<18} {r.strength:>8.2f} {r.k:>2} {r.tie_mode:<18} {r.recall:>7.3f} {r.stderr:>7.3f} {ms:>8}"
            )
        lines.append(f"trials: {self.n_trials}  failures: {self.failures}")
        return "\n".join(lines)


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n > 0 else float("nan")


def topk_hit(groups: Sequence[Sequence[str]], truth: str, k: int, tie_mode: TieMode, rng: np.random.Generator) -> bool:
    """Whether ``truth`` is in the top ``k`` of a ranking given as tie groups.

    ``with_ties`` keeps every member of a group that starts within the first
    ``k`` positions; ``random_among_ties`` shuffles each group and takes exactly
    ``k`` entries.
    """
    if tie_mode == "with_ties":
        seen = 0
        for group in groups:
            if seen >= k:
                break
            if truth in group:
                return True
            seen += len(group)
        return False
    if tie_mode == "random_among_ties":
        taken: list[str] = []
        for group in groups:
            if len(taken) >= k:
                break
            taken.extend(rng.permutation(list(group)).tolist())
        return truth in taken[:k]
    raise ValueError(f"unknown tie mode {tie_mode!r}")


def topk_recall(
    rankings: Sequence[Sequence[Sequence[str]]],
    truths: Sequence[str],
    k: int,
    tie_mode: TieMode,
    rng: np.random.Generator | None = None,
) -> float:
    if len(rankings) != len(truths):
        raise MisalignedError(f"{len(rankings)} rankings but {len(truths)} truths")
    if not truths:
        return float("nan")
    rng = rng if rng is not None else np.random.default_rng(0)
    return sum(topk_hit(g, t, k, tie_mode, rng) for g, t in zip(rankings, truths)) / len(truths)


def _timed(fn, enabled: bool):
    start = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - start if enabled else None)


def run_trial(config: ExperimentConfig, strength: float, trial: int) -> TrialRecord:
    """One simulated incident.

    The model, normal data, root cause, target and injection noise depend only
    on ``(seed, trial)``, so different strengths see paired incidents.
    """
    record = TrialRecord(strength=strength, trial=trial)
    model_ss, inject_ss, graph_ss = np.random.SeedSequence([config.seed, trial]).spawn(3)
    model_rng = np.random.default_rng(model_ss)
    try:
        scm = sample_random_scm(config.scm_config(), model_rng)
        normal = sample_normal(scm, config.normal_samples, model_rng)
        nodes = scm.nodes
        root = nodes[int(model_rng.integers(len(nodes)))]
        desc = [n for n in scm.dag.topological_order() if n in descendants(scm.dag, root)]
        target = desc[int(model_rng.integers(len(desc)))]
        record.root_cause, record.target = root, target

        row, _ = inject_anomaly(
            scm, root, strength, normal.std(axis=0), np.random.default_rng(inject_ss), mode=config.injection
        )
        data = Dataset(nodes, normal, row)
        scores = estimate_scores(data, FeatureMap.calibrate(normal, config.feature))

        graph: CausalDag = scm.dag
        target_shd = config.shd_perturbation
        if config.shd_fraction is not None:
            target_shd = int(round(config.shd_fraction * len(graph.edges)))
        if target_shd:
            graph = perturb_graph(graph, target_shd, np.random.default_rng(graph_ss))
            record.shd = target_shd

        for method in config.methods:
            if method == "smooth_traversal":
                res, dt = _timed(
                    lambda: smooth_traversal(scores, graph, target, parent_mode=config.parent_mode), config.timing
                )
                record.rankings[method] = res.tie_groups()
                record.delta_max = res.ranking[0][1]
            elif method == "classic_traversal":
                res, dt = _timed(lambda: classic_traversal_result(scores, graph, target, config.threshold), config.timing)
                record.rankings[method] = res.tie_groups()
            else:
                d_max = config.d_max or max(1, max_in_degree(scm.dag))
                cand, dt = _timed(lambda: score_ordering(scores, d_max, config.alpha), config.timing)
                record.rankings[method] = group_ties(score_ranking(scores))
                record.candidate_set = list(cand.members)
            if dt is not None:
                record.runtimes[method] = dt
    except Exception as exc:  # recorded and excluded, never dropped silently
        log.warning("trial %d at strength %s failed: %s", trial, strength, exc)
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def _run_trial_star(args):
    return run_trial(*args)


def run_trials(config: ExperimentConfig, done: list[TrialRecord] | None = None) -> list[TrialRecord]:
    """Run every (strength, trial) pair; results are ordered by job regardless of ``workers``.

    Finished records are appended to ``done`` as they arrive so a caller can
    salvage them after an interrupt.
    """
    done = [] if done is None else done
    jobs = [(config, float(s), t) for s in config.anomaly_strengths for t in range(config.trials_per_point)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for rec in pool.map(_run_trial_star, jobs, chunksize=8):
                done.append(rec)
    else:
        for job in jobs:
            done.append(run_trial(*job))
    return done


def aggregate(config: ExperimentConfig, records: Sequence[TrialRecord]) -> MetricsReport:
    rows: list[MetricRow] = []
    coverage: list[CoverageRow] = []
    tie_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7135]))
    for strength in config.anomaly_strengths:
        at = [r for r in records if r.strength == float(strength)]
        ok = [r for r in at if r.error is None]
        failures = len(at) - len(ok)
        for method in config.methods:
            times = [r.runtimes[method] for r in ok if method in r.runtimes]
            mean_ms = 1e3 * float(np.mean(times)) if times else None
            for k in config.top_k:
                for tie_mode in TIE_MODES:
                    recall = topk_recall(
                        [r.rankings[method] for r in ok], [r.root_cause for r in ok], k, tie_mode, tie_rng
                    )
                    rows.append(
                        MetricRow(method, float(strength), k, tie_mode, recall,
                                  binomial_stderr(recall, len(ok)), len(ok), failures, mean_ms)
                    )
        sets = [r for r in ok if r.candidate_set is not None]
        if sets:
            cov = sum(r.root_cause in r.candidate_set for r in sets) / len(sets)
            coverage.append(
                CoverageRow(float(strength), cov, binomial_stderr(cov, len(sets)),
                            float(np.mean([len(r.candidate_set) for r in sets])), len(sets))
            )
    n_fail = sum(r.error is not None for r in records)
    return MetricsReport(rows, coverage, n_fail, len(records), config.model_dump(mode="json"))


def run_experiment(config: ExperimentConfig, trial_log: str | Path | None = None) -> MetricsReport:
    records: list[TrialRecord] = []
    try:
        run_trials(config, records)
    except KeyboardInterrupt:
        raise BenchInterrupted(aggregate(config, records)) from None
    if trial_log is not None:
        with open(trial_log, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(asdict(r)) + "\n")
    return aggregate(config, records)
