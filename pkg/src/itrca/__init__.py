"""Root-cause analysis from marginal information-theoretic anomaly scores."""

__version__ = "0.1.0"

from .graph import CausalDag, ancestors, build_dag, is_polytree, max_in_degree, perturb_graph  # noqa: E402
from .rca import (  # noqa: E402
    CandidateSet,
    RcaResult,
    classic_traversal,
    pval_gap,
    pval_independent,
    pval_joint,
    pval_marginal,
    pval_maxjump,
    pval_topk,
    score_ordering,
    smooth_traversal,
)
from .scoring import (  # noqa: E402
    Dataset,
    FeatureMap,
    ScoreVector,
    estimate_it_score,
    estimate_scores,
    joint_parent_score,
    recalibrate_sum,
    required_samples,
)

__all__ = [
    "CandidateSet",
    "CausalDag",
    "Dataset",
    "FeatureMap",
    "RcaResult",
    "ScoreVector",
    "ancestors",
    "build_dag",
    "classic_traversal",
    "estimate_it_score",
    "estimate_scores",
    "is_polytree",
    "joint_parent_score",
    "max_in_degree",
    "perturb_graph",
    "pval_gap",
    "pval_independent",
    "pval_joint",
    "pval_marginal",
    "pval_maxjump",
    "pval_topk",
    "recalibrate_sum",
    "required_samples",
    "score_ordering",
    "smooth_traversal",
]
