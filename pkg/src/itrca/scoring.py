"""Marginal information-theoretic anomaly scores.

Scores are in nats: ``S(x) = -log P(tau(X) >= tau(x))``.  The estimator counts
the observed point among the reference sample, so it is the negative log of a
conformal p-value and never exceeds ``log k``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

FeatureKind = Literal["identity", "z_score", "abs_z_score"]
FEATURE_KINDS: tuple[str, ...] = ("identity", "z_score", "abs_z_score")


class ScoringError(ValueError):
    pass


class EmptySampleError(ScoringError):
    pass


class UncalibratedFeatureError(ScoringError):
    pass


class NegativeScoreError(ScoringError):
    pass


class DomainError(ScoringError):
    pass


class MisalignedDataError(ScoringError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    """Scalar feature map ``tau`` applied column-wise.

    ``mean`` and ``std`` are either scalars (single variable) or arrays with one
    entry per column.  ``identity`` needs no calibration.
    """

    kind: FeatureKind = "abs_z_score"
    mean: np.ndarray | float | None = None
    std: np.ndarray | float | None = None

    def __post_init__(self) -> None:
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}; expected one of {FEATURE_KINDS}")
        if self.kind != "identity" and self.std is not None:
            std = np.asarray(self.std, dtype=float)
            if not np.all(np.isfinite(std)) or np.any(std <= 0):
                raise UncalibratedFeatureError("z-score features need a positive standard deviation")

    @property
    def calibrated(self) -> bool:
        return self.kind == "identity" or (self.mean is not None and self.std is not None)

    @classmethod
    def calibrate(cls, normal: np.ndarray, kind: FeatureKind = "abs_z_score") -> "FeatureMap":
        """Fit mean/std per column of ``normal`` (1-D input gives scalar calibration)."""
        normal = np.asarray(normal, dtype=float)
        if normal.shape[0] == 0:
            raise EmptySampleError("cannot calibrate on an empty sample")
        if kind == "identity":
            return cls(kind)
        mean = normal.mean(axis=0)
        std = normal.std(axis=0)
        bad = np.atleast_1d(std <= 0)
        if bad.any():
            raise UncalibratedFeatureError(
                f"zero variance in {int(bad.sum())} column(s); z-score feature undefined"
            )
        if normal.ndim == 1:
            mean, std = float(mean), float(std)
        return cls(kind, mean, std)

    def select(self, column: int) -> "FeatureMap":
        if self.kind == "identity":
            return self
        return FeatureMap(self.kind, float(np.asarray(self.mean)[column]), float(np.asarray(self.std)[column]))

    def __call__(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.kind == "identity":
            return values
        if not self.calibrated:
            raise UncalibratedFeatureError(f"{self.kind} feature used before calibration")
        z = (values - self.mean) / self.std
        return np.abs(z) if self.kind == "abs_z_score" else z


@dataclass(frozen=True)
class Dataset:
    variable_names: tuple[str, ...]
    normal_matrix: np.ndarray
    anomalous_row: np.ndarray

    def __post_init__(self) -> None:
        names = tuple(str(n) for n in self.variable_names)
        normal = np.asarray(self.normal_matrix, dtype=float)
        row = np.asarray(self.anomalous_row, dtype=float).reshape(-1)
        if normal.ndim != 2:
            raise MisalignedDataError("normal_matrix must be two-dimensional")
        if normal.shape[0] < 1:
            raise EmptySampleError("need at least one normal-period row")
        if normal.shape[1] != len(names) or row.shape[0] != len(names):
            raise MisalignedDataError(
                f"{len(names)} names but {normal.shape[1]} normal columns and {row.shape[0]} anomalous values"
            )
        if not (np.all(np.isfinite(normal)) and np.all(np.isfinite(row))):
            raise MisalignedDataError("dataset contains missing or non-finite values")
        object.__setattr__(self, "variable_names", names)
        object.__setattr__(self, "normal_matrix", normal)
        object.__setattr__(self, "anomalous_row", row)

    @property
    def k(self) -> int:
        return self.normal_matrix.shape[0]

    @classmethod
    def from_csv(
        cls,
        path: str | Path,
        anomalous_row: int | None = None,
        anomalous_path: str | Path | None = None,
    ) -> "Dataset":
        """Read a header+rows CSV.

        By default the last row is the anomalous observation.  ``anomalous_row``
        selects another row by index (negative indices allowed);
        ``anomalous_path`` reads it from a separate CSV with the same header.
        """
        names, rows = _read_csv(path)
        if anomalous_path is not None:
            other_names, other = _read_csv(anomalous_path)
            if other_names != names:
                raise MisalignedDataError("anomalous CSV header differs from data header")
            if len(other) != 1:
                raise MisalignedDataError("anomalous CSV must contain exactly one data row")
            return cls(names, np.array(rows, dtype=float).reshape(-1, len(names)), np.array(other[0]))
        if len(rows) < 2:
            raise EmptySampleError("data CSV needs at least one normal row and one anomalous row")
        idx = len(rows) - 1 if anomalous_row is None else anomalous_row % len(rows)
        anomalous = rows[idx]
        normal = rows[:idx] + rows[idx + 1 :]
        return cls(names, np.array(normal, dtype=float), np.array(anomalous, dtype=float))


def _read_csv(path: str | Path) -> tuple[tuple[str, ...], list[list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MisalignedDataError(f"{path}: empty file") from None
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise MisalignedDataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise MisalignedDataError(f"{path}:{lineno}: {exc}") from None
    return tuple(h.strip() for h in header), rows


def write_csv(path: str | Path | None, names: Sequence[str], rows: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in np.atleast_2d(rows):
        writer.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


@dataclass(frozen=True)
class ScoreVector:
    variable_names: tuple[str, ...]
    scores: np.ndarray
    sample_count: int

    def __getitem__(self, name: str) -> float:
        return float(self.scores[self.variable_names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(s) for n, s in zip(self.variable_names, self.scores)}

    def to_json(self) -> dict:
        return {"scores": self.as_dict(), "k": int(self.sample_count)}

    @classmethod
    def from_mapping(cls, scores: dict[str, float], k: int = 0) -> "ScoreVector":
        names = tuple(scores)
        return cls(names, np.array([float(scores[n]) for n in names]), int(k))


def estimate_it_score(normal_values, observed: float, feature: FeatureMap | None = None) -> float:
    """``-log(#{tau(v) >= tau(observed)} / k)`` where the count and ``k`` include the observed point."""
    normal_values = np.asarray(normal_values, dtype=float).reshape(-1)
    if normal_values.size == 0:
        raise EmptySampleError("need at least one normal value")
    feature = feature or FeatureMap("identity")
    if not feature.calibrated:
        raise UncalibratedFeatureError(f"{feature.kind} feature used before calibration")
    t_obs = feature(observed)
    count = int(np.count_nonzero(feature(normal_values) >= t_obs)) + 1
    k = normal_values.size + 1
    return -math.log(count / k)


def estimate_scores(dataset: Dataset, feature: FeatureMap | FeatureKind = "abs_z_score") -> ScoreVector:
    """Column-wise :func:`estimate_it_score`; z features are calibrated on the normal rows."""
    if isinstance(feature, str):
        feature = FeatureMap.calibrate(dataset.normal_matrix, feature)
    elif not feature.calibrated:
        feature = FeatureMap.calibrate(dataset.normal_matrix, feature.kind)
    t_normal = feature(dataset.normal_matrix)
    t_obs = feature(dataset.anomalous_row)
    counts = np.count_nonzero(t_normal >= t_obs, axis=0) + 1
    k = dataset.k + 1
    scores = np.log(k) - np.log(counts)
    return ScoreVector(dataset.variable_names, scores, k)


def log_erlang_tail(total, m: int):
    """``log(exp(-total) * sum_{l<m} total**l / l!)``: log survival of a sum of ``m`` unit exponentials.

    Accepts a scalar or an array of totals.
    """
    t = np.asarray(total, dtype=float)
    ls = np.arange(int(m))
    # xlogy keeps the l = 0 term at 0 when total = 0
    out = logsumexp(xlogy(ls, np.maximum(t, 0.0)[..., None]) - gammaln(ls + 1), axis=-1) - t
    out = np.where(t <= 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def recalibrate_sum(sum_of_scores, m: int):
    """Turn a sum of ``m`` independent IT scores back into an IT score (scalar or array)."""
    if m < 1:
        raise DomainError("m must be a positive integer")
    s = np.asarray(sum_of_scores, dtype=float)
    if np.any(s < 0):
        raise NegativeScoreError("sum of scores must be nonnegative")
    out = np.maximum(0.0 - np.asarray(log_erlang_tail(s, int(m))), 0.0)
    return float(out) if out.ndim == 0 else out


def joint_parent_score(parent_scores: Sequence[float]) -> float:
    scores = [float(s) for s in parent_scores]
    if any(s < 0 for s in scores):
        raise NegativeScoreError("parent scores must be nonnegative")
    if not scores:
        return 0.0
    if len(scores) == 1:
        return scores[0]
    return recalibrate_sum(sum(scores), len(scores))


def required_samples(s_max: float, delta: float, alpha: float, n: int) -> int:
    """Normal-period sample size after which all ``n`` score estimates are within
    ``delta`` of the truth with probability ``1 - alpha``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if delta <= 0:
        raise DomainError("delta must be positive")
    if n < 1 or s_max < 0:
        raise DomainError("n must be positive and s_max nonnegative")
    return math.ceil(3.0 * math.exp(s_max) / delta**2 * math.log(2 * n / alpha))


def check_score_typicality(conditional_score: float, child_score: float, parent_joint_score: float) -> bool:
    return conditional_score >= max(child_score - parent_joint_score, 0.0)
