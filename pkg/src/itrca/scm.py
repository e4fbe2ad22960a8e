"""Structural causal model simulation for the synthetic benchmark.

Random models follow the usual synthetic RCA setup: 20-40% root nodes with
Gaussian, uniform or Gaussian-mixture noise; non-roots get a linear or small
one-hidden-layer network mechanism plus additive Gaussian noise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .graph import CausalDag, build_dag
from .scoring import FeatureMap

NoiseKind = Literal["gaussian", "uniform", "mixture"]
InjectionMode = Literal["marginal", "noise"]

MIXTURE_MEANS = (-2.0, 2.0)


class ConfigError(ValueError):
    pass


class SingularityError(np.linalg.LinAlgError):
    pass


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = "gaussian"
    scale: float = 1.0

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.scale * rng.standard_normal(count)
        if self.kind == "uniform":
            # unit variance before scaling
            half = math.sqrt(3.0)
            return self.scale * rng.uniform(-half, half, count)
        if self.kind == "mixture":
            means = np.where(rng.random(count) < 0.5, MIXTURE_MEANS[0], MIXTURE_MEANS[1])
            return self.scale * (means + rng.standard_normal(count))
        raise ConfigError(f"unknown noise kind {self.kind!r}")

    @property
    def variance(self) -> float:
        base = 1.0 + (MIXTURE_MEANS[1] ** 2 if self.kind == "mixture" else 0.0)
        return self.scale**2 * base

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": float(self.scale)}


@dataclass(frozen=True)
class LinearMechanism:
    coefficients: np.ndarray

    kind = "linear"

    def __call__(self, parents: np.ndarray) -> np.ndarray:
        return parents @ self.coefficients

    @property
    def arity(self) -> int:
        return len(self.coefficients)

    def to_dict(self) -> dict:
        return {"kind": "linear", "coefficients": [float(c) for c in self.coefficients]}


@dataclass(frozen=True)
class MlpMechanism:
    """``w_out . act(parents @ w_in + b_in) + b_out`` with one hidden layer."""

    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: float
    activation: str = "sigmoid"

    kind = "mlp"

    def __call__(self, parents: np.ndarray) -> np.ndarray:
        hidden = parents @ self.w_in + self.b_in
        hidden = expit(hidden) if self.activation == "sigmoid" else np.tanh(hidden)
        return hidden @ self.w_out + self.b_out

    @property
    def arity(self) -> int:
        return self.w_in.shape[0]

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "activation": self.activation,
            "w_in": self.w_in.tolist(),
            "b_in": self.b_in.tolist(),
            "w_out": self.w_out.tolist(),
            "b_out": float(self.b_out),
        }


Mechanism = LinearMechanism | MlpMechanism


def _mechanism_from_dict(payload: dict) -> Mechanism:
    if payload["kind"] == "linear":
        return LinearMechanism(np.array(payload["coefficients"], dtype=float))
    if payload["kind"] == "mlp":
        n_hidden = len(payload["b_in"])
        w_in = np.array(payload["w_in"], dtype=float).reshape(-1, n_hidden)
        return MlpMechanism(
            w_in,
            np.array(payload["b_in"], dtype=float),
            np.array(payload["w_out"], dtype=float),
            float(payload["b_out"]),
            payload.get("activation", "sigmoid"),
        )
    raise ConfigError(f"unknown mechanism kind {payload['kind']!r}")


@dataclass(frozen=True)
class Scm:
    dag: CausalDag
    mechanisms: Mapping[str, Mechanism]
    noise: Mapping[str, NoiseSpec]
    _plan: list = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        for node in self.dag.nodes:
            if node not in self.noise:
                raise ConfigError(f"missing noise spec for {node!r}")
            mech = self.mechanisms.get(node)
            n_par = self.dag.in_degree(node)
            if mech is None and n_par:
                raise ConfigError(f"missing mechanism for non-root {node!r}")
            if mech is not None and mech.arity != n_par:
                raise ConfigError(f"{node!r}: mechanism takes {mech.arity} inputs, graph has {n_par} parents")
        plan = [
            (self.dag.index(n), [self.dag.index(p) for p in self.dag.parents(n)], self.mechanisms.get(n))
            for n in self.dag.topological_order()
        ]
        object.__setattr__(self, "_plan", plan)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.dag.nodes

    def sample_noise(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return np.column_stack([self.noise[n].sample(count, rng) for n in self.dag.nodes]).reshape(count, -1)

    def propagate(self, noise: np.ndarray) -> np.ndarray:
        """Evaluate mechanisms in topological order on a (count, n) noise matrix."""
        values = np.array(noise, dtype=float, copy=True)
        for i, parent_idx, mech in self._plan:
            if parent_idx:
                values[:, i] += mech(values[:, parent_idx])
        return values

    def noise_std(self) -> np.ndarray:
        return np.array([math.sqrt(self.noise[n].variance) for n in self.dag.nodes])

    def is_linear(self) -> bool:
        return all(isinstance(m, LinearMechanism) for m in self.mechanisms.values())

    def to_linear(self) -> "LinearScm":
        """Coefficient-matrix view in topological order (linear mechanisms only)."""
        if not self.is_linear():
            raise ConfigError("model has non-linear mechanisms")
        order = list(self.dag.topological_order())
        pos = {n: i for i, n in enumerate(order)}
        A = np.zeros((len(order), len(order)))
        for node in order:
            mech = self.mechanisms.get(node)
            for p, c in zip(self.dag.parents(node), mech.coefficients if mech is not None else ()):
                A[pos[node], pos[p]] = c
        return LinearScm(A, np.array([self.noise[n].variance for n in order]), tuple(order))

    def to_dict(self) -> dict:
        return {
            "dag": self.dag.to_dict(),
            "mechanisms": {n: m.to_dict() for n, m in self.mechanisms.items()},
            "noise": {n: s.to_dict() for n, s in self.noise.items()},
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, payload: dict) -> "Scm":
        return cls(
            CausalDag.from_dict(payload["dag"]),
            {n: _mechanism_from_dict(m) for n, m in payload["mechanisms"].items()},
            {n: NoiseSpec(s["kind"], float(s.get("scale", 1.0))) for n, s in payload["noise"].items()},
        )

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "Scm":
        if isinstance(text_or_path, Path) or not str(text_or_path).lstrip().startswith("{"):
            text_or_path = Path(text_or_path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text_or_path))


@dataclass(frozen=True)
class LinearScm:
    """``X = A X + N`` with ``A`` strictly lower triangular (topological order)."""

    coefficients: np.ndarray
    noise_variances: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        A = np.asarray(self.coefficients, dtype=float)
        var = np.asarray(self.noise_variances, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != var.shape[0]:
            raise ConfigError("coefficient matrix must be square and match the noise variances")
        if np.any(np.triu(A) != 0):
            raise ConfigError("coefficient matrix must be strictly lower triangular")
        if np.any(var <= 0):
            raise ConfigError("noise variances must be positive")
        object.__setattr__(self, "coefficients", A)
        object.__setattr__(self, "noise_variances", var)

    def covariance(self) -> np.ndarray:
        L = cholesky_source_matrix(self)
        return L @ L.T


@dataclass(frozen=True)
class ScmConfig:
    n_nodes: int
    polytree: bool = False
    root_fraction_range: tuple[float, float] = (0.2, 0.4)
    linear_probability: float = 0.2
    coefficient_range: tuple[float, float] = (-1.0, 1.0)
    mlp_param_range: tuple[float, float] = (-5.0, 5.0)
    hidden_range: tuple[int, int] = (2, 100)
    parent_success: float = 0.5
    root_noise_kinds: tuple[str, ...] = ("gaussian", "uniform", "mixture")
    activation: str = "sigmoid"

    def validate(self) -> None:
        lo, hi = self.root_fraction_range
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be positive")
        if not (0 <= lo <= hi <= 1):
            raise ConfigError("root_fraction_range must satisfy 0 <= lo <= hi <= 1")
        if not 0 <= self.linear_probability <= 1:
            raise ConfigError("linear_probability must lie in [0, 1]")
        if not 0 < self.parent_success <= 1:
            raise ConfigError("parent_success must lie in (0, 1]")
        if self.hidden_range[0] < 1 or self.hidden_range[0] > self.hidden_range[1]:
            raise ConfigError("hidden_range must be a positive, ordered pair")
        bad = set(self.root_noise_kinds) - {"gaussian", "uniform", "mixture"}
        if bad or not self.root_noise_kinds:
            raise ConfigError(f"invalid root noise kinds {sorted(bad)}")
        if self.activation not in ("sigmoid", "tanh"):
            raise ConfigError("activation must be 'sigmoid' or 'tanh'")


def sample_random_graph(config: ScmConfig, rng: np.random.Generator) -> CausalDag:
    """Roots first, then each non-root picks a geometric number of earlier parents.

    In polytree mode parents are drawn from distinct connected components so the
    skeleton stays a forest.
    """
    n = config.n_nodes
    lo = math.ceil(config.root_fraction_range[0] * n - 1e-9)
    hi = math.floor(config.root_fraction_range[1] * n + 1e-9)
    lo, hi = max(1, min(lo, n)), max(1, min(hi, n))
    n_roots = int(rng.integers(lo, max(lo, hi) + 1))
    names = [f"X{i}" for i in range(n)]
    comp = list(range(n))  # union-find over already-placed nodes

    def find(i: int) -> int:
        while comp[i] != i:
            comp[i] = comp[comp[i]]
            i = comp[i]
        return i

    edges: list[tuple[str, str]] = []
    for i in range(n_roots, n):
        if config.polytree:
            groups: dict[int, list[int]] = {}
            for j in range(i):
                groups.setdefault(find(j), []).append(j)
            pools = list(groups.values())
            available = len(pools)
        else:
            available = i
        k = min(int(rng.geometric(config.parent_success)), available)
        if config.polytree:
            picked = rng.choice(available, size=k, replace=False)
            parents = sorted(int(rng.choice(pools[g])) for g in picked)
            for p in parents:
                comp[find(p)] = find(i)
        else:
            parents = sorted(int(p) for p in rng.choice(i, size=k, replace=False))
        edges.extend((names[p], names[i]) for p in parents)
    return build_dag(names, edges)


def sample_random_scm(config: ScmConfig, rng: np.random.Generator) -> Scm:
    config.validate()
    dag = sample_random_graph(config, rng)
    mechanisms: dict[str, Mechanism] = {}
    noise: dict[str, NoiseSpec] = {}
    lo_c, hi_c = config.coefficient_range
    lo_w, hi_w = config.mlp_param_range
    for node in dag.nodes:
        n_par = dag.in_degree(node)
        if n_par == 0:
            kind = config.root_noise_kinds[int(rng.integers(len(config.root_noise_kinds)))]
            noise[node] = NoiseSpec(kind)
            continue
        noise[node] = NoiseSpec("gaussian")
        if rng.random() < config.linear_probability:
            mechanisms[node] = LinearMechanism(rng.uniform(lo_c, hi_c, n_par))
        else:
            h = int(rng.integers(config.hidden_range[0], config.hidden_range[1] + 1))
            mechanisms[node] = MlpMechanism(
                rng.uniform(lo_w, hi_w, (n_par, h)),
                rng.uniform(lo_w, hi_w, h),
                rng.uniform(lo_w, hi_w, h),
                float(rng.uniform(lo_w, hi_w)),
                config.activation,
            )
    return Scm(dag, mechanisms, noise)


def sample_normal(scm: Scm, count: int, rng: np.random.Generator) -> np.ndarray:
    """Forward-sample ``count`` rows (columns in ``scm.nodes`` order)."""
    if count < 1:
        raise ConfigError("count must be positive")
    return scm.propagate(scm.sample_noise(count, rng))


def inject_anomaly(
    scm: Scm,
    root_cause: str,
    strength: float,
    marginal_std: Sequence[float] | Mapping[str, float],
    rng: np.random.Generator,
    mode: InjectionMode = "marginal",
) -> tuple[np.ndarray, str]:
    """Draw one row with the root cause's noise shifted by ``strength`` standard deviations.

    ``mode="marginal"`` uses the root cause's marginal standard deviation
    (``marginal_std``, usually estimated from normal data); ``"noise"`` uses the
    standard deviation of its noise term instead.
    """
    j = scm.dag.index(root_cause)
    if mode == "marginal":
        if isinstance(marginal_std, Mapping):
            sd = float(marginal_std[root_cause])
        else:
            sd = float(np.asarray(marginal_std)[j])
    elif mode == "noise":
        sd = math.sqrt(scm.noise[root_cause].variance)
    else:
        raise ConfigError(f"unknown injection mode {mode!r}")
    noise = scm.sample_noise(1, rng)
    noise[0, j] += strength * sd
    return scm.propagate(noise)[0], root_cause


def conditional_score_oracle(
    scm: Scm,
    node: str,
    parent_values: Sequence[float] | Mapping[str, float],
    observed: float,
    feature: FeatureMap,
    mc_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo ``-log P(tau(X) >= tau(observed) | parents)``, capped at ``log(mc_samples)``.

    ``feature`` must be the single-variable map used for the node's marginal score.
    """
    if mc_samples < 1000:
        raise ConfigError("mc_samples must be at least 1000")
    scm.dag.index(node)
    parents = scm.dag.parents(node)
    if isinstance(parent_values, Mapping):
        pv = np.array([float(parent_values[p]) for p in parents])
    else:
        pv = np.asarray(parent_values, dtype=float).reshape(-1)
    if pv.shape[0] != len(parents):
        raise ConfigError(f"{node!r} has {len(parents)} parents, got {pv.shape[0]} values")
    base = float(scm.mechanisms[node](pv[None, :])[0]) if parents else 0.0
    draws = base + scm.noise[node].sample(mc_samples, rng)
    count = max(int(np.count_nonzero(feature(draws) >= feature(observed))), 1)
    return -math.log(count / mc_samples)


def cholesky_source_matrix(model: LinearScm) -> np.ndarray:
    """``L = (I - A)^{-1} diag(noise_var)^{1/2}``, so that ``L L^T`` is the covariance."""
    n = model.coefficients.shape[0]
    I_minus_A = np.eye(n) - model.coefficients
    if np.any(np.diag(I_minus_A) == 0):
        raise SingularityError("I - A is singular")
    inv = solve_triangular(I_minus_A, np.eye(n), lower=True)
    return inv * np.sqrt(model.noise_variances)[None, :]


@dataclass(frozen=True)
class InversionReport:
    """Effects that out-score their root cause in the large-shift limit.

    ``pairs`` lists ``(i, j)`` with ``i < j`` and ``L[i, i]**2 < L[j, i]**2`` after
    row normalisation: shifting source ``i`` moves ``X_j`` more than ``X_i``.
    ``counts[j]`` counts such ``i`` per effect ``j``; each is at most ``bound``.
    """

    counts: list[int]
    pairs: list[tuple[int, int]]
    rho: float
    bound: float

    @property
    def count(self) -> int:
        return max(self.counts, default=0)

    @property
    def total(self) -> int:
        return len(self.pairs)

    def to_json(self) -> dict:
        return {"count": self.count, "total": self.total, "counts": self.counts, "rho": self.rho, "bound": self.bound}


def score_inversion_report(L: np.ndarray) -> InversionReport:
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DegenerateError("L must be square")
    if np.any(np.diag(L) == 0):
        raise DegenerateError("L has a zero diagonal entry")
    Ln = L / np.linalg.norm(L, axis=1, keepdims=True)
    sq = Ln**2
    diag = np.diag(sq)
    rho = float(diag.min())
    n = L.shape[0]
    pairs = [(i, j) for j in range(n) for i in range(j) if diag[i] < sq[j, i]]
    counts = [0] * n
    for _, j in pairs:
        counts[j] += 1
    return InversionReport(counts=counts, pairs=pairs, rho=rho, bound=(1.0 - rho) / rho)

