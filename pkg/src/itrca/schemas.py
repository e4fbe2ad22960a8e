"""Request/response models shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .bench import ExperimentConfig

FeatureName = Literal["identity", "z_score", "abs_z_score"]

GRAPH_METHODS = ("smooth_traversal", "classic_traversal")
ALL_METHODS = ("smooth_traversal", "score_ordering", "classic_traversal")


def normalize_method(name: str) -> str:
    return name.strip().lower().replace("-", "_")


class GraphModel(BaseModel):
    nodes: list[str]
    edges: list[tuple[str, str]] = []


class ScoreRequest(BaseModel):
    variable_names: list[str] = Field(min_length=1)
    normal: list[list[float]] = Field(min_length=1)
    anomalous: list[float]
    feature: FeatureName = "abs_z_score"


class ScoreResponse(BaseModel):
    scores: dict[str, float]
    k: int


class AnalyzeRequest(BaseModel):
    """Either precomputed ``scores`` or raw ``data`` must be given."""

    method: str
    scores: dict[str, float] | None = None
    k: int | None = None
    data: ScoreRequest | None = None
    graph: GraphModel | None = None
    target: str | None = None
    d_max: int | None = Field(None, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)
    threshold: float = Field(3.0, ge=0)
    parent_mode: Literal["max", "joint"] = "max"
    all_nodes: bool = False
    # score-ordering without a known in-degree bound: confidence of the top-`top_k` set per value
    d_max_values: list[int] | None = None
    top_k: int | None = Field(None, ge=1)

    @field_validator("method")
    @classmethod
    def _method(cls, value: str) -> str:
        value = normalize_method(value)
        if value not in ALL_METHODS:
            raise ValueError(f"unknown method {value!r}; valid methods: {', '.join(ALL_METHODS)}")
        return value

    @model_validator(mode="after")
    def _inputs(self) -> "AnalyzeRequest":
        if (self.scores is None) == (self.data is None):
            raise ValueError("give exactly one of 'scores' and 'data'")
        if self.method in GRAPH_METHODS and self.graph is None:
            raise ValueError(f"method {self.method} requires a graph")
        if self.method == "classic_traversal" and self.target is None:
            raise ValueError("classic_traversal requires a target")
        if self.method == "score_ordering":
            if self.d_max_values is not None:
                if self.top_k is None:
                    raise ValueError("d_max_values needs top_k")
            elif self.d_max is None:
                raise ValueError("score_ordering requires d_max (or d_max_values with top_k)")
        return self


class RcaResponse(BaseModel):
    method: str
    chosen: str
    ranking: list[tuple[str, float]]
    p_value_bound: float
    warnings: list[str] = []


class CandidateResponse(BaseModel):
    members: list[str]
    confidence: float
    k: int
    d_max: int


class ConfidenceResponse(BaseModel):
    members: list[str]
    k: int
    confidence: dict[int, float]


class PerturbRequest(BaseModel):
    graph: GraphModel
    target_shd: int = Field(ge=0)
    seed: int = 0


class PerturbResponse(BaseModel):
    graph: GraphModel
    shd: int


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: int = Field(ge=1)
    polytree: bool = False
    strength: float = 3.0
    seed: int = 0
    samples: int = Field(1000, ge=1)
    linear_probability: float = Field(0.2, ge=0, le=1)


class SimulateResponse(BaseModel):
    scm: dict
    variable_names: list[str]
    normal: list[list[float]]
    anomalous: list[float]
    truth: dict


BenchRequest = ExperimentConfig
