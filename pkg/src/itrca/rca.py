"""Root-cause identification from marginal anomaly scores, plus the p-value bounds behind it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .graph import CausalDag, ancestors, is_polytree
from .scoring import ScoreVector, joint_parent_score, log_erlang_tail

Method = Literal["smooth_traversal", "score_ordering", "classic_traversal"]
ParentMode = Literal["max", "joint"]

DEFAULT_THRESHOLD = 3.0


class MisalignedScoresError(ValueError):
    pass


@dataclass(frozen=True)
class RcaResult:
    method: Method
    chosen: str
    ranking: list[tuple[str, float]]
    p_value_bound: float
    warnings: list[str] = field(default_factory=list)

    def tie_groups(self) -> list[list[str]]:
        return group_ties(self.ranking)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "chosen": self.chosen,
            "ranking": [[n, float(v)] for n, v in self.ranking],
            "p_value_bound": float(self.p_value_bound),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class CandidateSet:
    members: list[str]
    confidence: float
    k: int
    d_max_assumed: int
    gap: float = 0.0

    def to_json(self) -> dict:
        return {
            "members": list(self.members),
            "confidence": float(self.confidence),
            "k": int(self.k),
            "d_max": int(self.d_max_assumed),
        }


def group_ties(ranking: Sequence[tuple[str, float]]) -> list[list[str]]:
    """Split a value-descending ranking into groups of exactly equal value."""
    groups: list[list[str]] = []
    last = None
    for name, value in ranking:
        if groups and value == last:
            groups[-1].append(name)
        else:
            groups.append([name])
            last = value
    return groups


def _score_lookup(scores: ScoreVector, dag: CausalDag) -> dict[str, float]:
    lookup = scores.as_dict()
    missing = [n for n in dag.nodes if n not in lookup]
    if missing:
        raise MisalignedScoresError(f"no score for graph node(s) {missing[:5]}")
    return lookup


# ---- p-value bounds -------------------------------------------------------


def pval_marginal(score: float) -> float:
    return math.exp(-max(score, 0.0))


def pval_gap(effect_score: float, cause_score: float) -> float:
    """Bound for the effect's mechanism having worked, given the cause's score."""
    return math.exp(-max(effect_score - cause_score, 0.0))


def pval_independent(score_x: float, score_y: float) -> float:
    total = score_x + score_y
    return min(1.0, math.exp(-total) * (1.0 + total))


def pval_joint(score_sum: float, n: int) -> float:
    """``exp(-s) * sum_{l=0}^{n-2} s**l / l!`` for the sum of ``n - 1`` conditional scores."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return min(1.0, math.exp(log_erlang_tail(score_sum, n - 1)))


def pval_maxjump(delta_max: float, n: int) -> float:
    """Bound on the largest score jump not sitting at the root cause, ``n`` variables."""
    if n < 1:
        raise ValueError("n must be positive")
    if delta_max <= 0:
        return 1.0
    # 1 - (1 - e^-d)^(n-1) via expm1/log1p; plain form loses everything for large d
    return 0.0 - float(np.expm1((n - 1) * np.log1p(-math.exp(-delta_max))))


def pval_topk(delta_k: float, n: int, d_max: int) -> float:
    return min(1.0, n * d_max * math.exp(-max(delta_k, 0.0)))


# ---- algorithms -----------------------------------------------------------


def smooth_traversal(
    scores: ScoreVector,
    dag: CausalDag,
    target: str | None = None,
    parent_mode: ParentMode = "max",
    all_nodes: bool = False,
) -> RcaResult:
    """Pick the node whose score jumps most above its parents.

    Each candidate gets ``delta = max(S(node) - S(parents), 0)`` where the parent
    score is the highest single parent score (``parent_mode="max"``) or the
    recalibrated joint parent score (``"joint"``); roots compare against 0.
    Only ancestors of ``target`` (itself included) are scanned unless
    ``all_nodes`` is set or no target is given.  Ties go to the node earliest in
    topological order.
    """
    lookup = _score_lookup(scores, dag)
    if target is not None:
        dag.index(target)
    if all_nodes or target is None:
        candidates = dag.topological_order()
    else:
        anc = ancestors(dag, target)
        candidates = [n for n in dag.topological_order() if n in anc]

    deltas: list[tuple[str, float]] = []
    for node in candidates:
        parent_scores = [lookup[p] for p in dag.parents(node)]
        if parent_mode == "joint":
            parent_score = joint_parent_score(parent_scores)
        else:
            parent_score = max(parent_scores, default=0.0)
        deltas.append((node, max(lookup[node] - parent_score, 0.0)))

    # stable sort keeps topological order within ties
    ranking = sorted(deltas, key=lambda item: -item[1])
    chosen, delta_max = ranking[0]
    warnings = [] if is_polytree(dag) else ["graph is not a polytree; p-value bound is not guaranteed"]
    return RcaResult(
        method="smooth_traversal",
        chosen=chosen,
        ranking=ranking,
        p_value_bound=pval_maxjump(delta_max, len(dag.nodes)),
        warnings=warnings,
    )


def _ordering(scores: ScoreVector) -> tuple[list[str], np.ndarray]:
    values = np.asarray(scores.scores, dtype=float)
    order = np.argsort(-values, kind="stable")
    return [scores.variable_names[i] for i in order], values[order]


def score_ordering(scores: ScoreVector, d_max: int, alpha: float) -> CandidateSet:
    """Smallest top-k set whose score gap certifies the root cause at level ``alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if d_max < 1:
        raise ValueError("d_max must be at least 1")
    names, values = _ordering(scores)
    n = len(names)
    if n == 0:
        raise MisalignedScoresError("no scores given")
    k, gap = n, math.inf
    for pos in range(1, n):
        delta = float(values[0] - values[pos])
        if pval_topk(delta, n, d_max) <= alpha:
            k, gap = pos, delta
            break
    # the full variable set contains the root cause with certainty
    confidence = 1.0 if k == n else 1.0 - pval_topk(gap, n, d_max)
    return CandidateSet(members=names[:k], confidence=confidence, k=k, d_max_assumed=d_max, gap=gap)


def score_ordering_confidences(scores: ScoreVector, k: int, d_max_values: Sequence[int]) -> dict[int, float]:
    """Confidence that the root cause is among the top ``k`` for each candidate in-degree bound."""
    names, values = _ordering(scores)
    n = len(names)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    if k == n:
        return {int(d): 1.0 for d in d_max_values}
    gap = float(values[0] - values[k])
    return {int(d): 1.0 - pval_topk(gap, n, int(d)) for d in d_max_values}


def score_ranking(scores: ScoreVector) -> list[tuple[str, float]]:
    names, values = _ordering(scores)
    return [(n, float(v)) for n, v in zip(names, values)]


def classic_traversal(
    scores: ScoreVector,
    dag: CausalDag,
    target: str,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[str]:
    """Anomalous nodes without anomalous parents, linked to ``target`` by an anomalous path.

    Falls back to ``[target]`` when nothing qualifies.  Returned in
    topological order.
    """
    lookup = _score_lookup(scores, dag)
    dag.index(target)
    anomalous = {n for n in dag.nodes if lookup[n] >= threshold}
    if target not in anomalous:
        return [target]
    # nodes that reach target through anomalous nodes only: walk parents from target
    reach = {target}
    stack = [target]
    while stack:
        for p in dag.parents(stack.pop()):
            if p in anomalous and p not in reach:
                reach.add(p)
                stack.append(p)
    found = [
        n for n in dag.topological_order()
        if n in reach and not any(p in anomalous for p in dag.parents(n))
    ]
    return found or [target]


def classic_traversal_result(
    scores: ScoreVector, dag: CausalDag, target: str, threshold: float = DEFAULT_THRESHOLD
) -> RcaResult:
    """:func:`classic_traversal` packaged as a ranking (candidates by score, descending).

    The attached bound is only the marginal one for the chosen node; the
    threshold rule itself carries no guarantee.
    """
    found = classic_traversal(scores, dag, target, threshold)
    lookup = scores.as_dict()
    ranking = sorted(((n, lookup[n]) for n in found), key=lambda item: -item[1])
    return RcaResult(
        method="classic_traversal",
        chosen=ranking[0][0],
        ranking=ranking,
        p_value_bound=pval_marginal(ranking[0][1]),
    )

