"""HTTP service exposing scoring, analysis, simulation and benchmarking.

The plain ``handle_*`` functions hold the logic; the FastAPI routes and the
CLI's in-process client both call them, so local and remote runs agree.
"""
from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from . import __version__
from .bench import ExperimentConfig, run_experiment
from .graph import CausalDag, GraphError, MaxRetriesError, build_dag, descendants, perturb_graph, structural_hamming_distance
from .rca import (
    MisalignedScoresError,
    classic_traversal_result,
    score_ordering,
    score_ordering_confidences,
    smooth_traversal,
)
from .scm import ScmConfig, inject_anomaly, sample_normal, sample_random_scm
from .schemas import (
    AnalyzeRequest,
    CandidateResponse,
    ConfidenceResponse,
    GraphModel,
    PerturbRequest,
    PerturbResponse,
    RcaResponse,
    ScoreRequest,
    ScoreResponse,
    SimulateRequest,
    SimulateResponse,
)
from .scoring import Dataset, FeatureMap, ScoreVector, ScoringError, estimate_scores

# Domain errors that mean "bad input" rather than a server fault.
INPUT_ERRORS = (GraphError, ScoringError, MisalignedScoresError, MaxRetriesError, ValueError)


def _graph(model: GraphModel) -> CausalDag:
    return build_dag(model.nodes, model.edges)


def handle_score(req: ScoreRequest) -> ScoreResponse:
    data = Dataset(tuple(req.variable_names), np.array(req.normal, dtype=float), np.array(req.anomalous, dtype=float))
    sv = estimate_scores(data, FeatureMap.calibrate(data.normal_matrix, req.feature))
    return ScoreResponse(**sv.to_json())


def handle_analyze(req: AnalyzeRequest) -> RcaResponse | CandidateResponse | ConfidenceResponse:
    if req.scores is not None:
        scores = ScoreVector.from_mapping(req.scores, req.k or 0)
    else:
        scored = handle_score(req.data)
        scores = ScoreVector.from_mapping(scored.scores, scored.k)

    if req.method == "score_ordering":
        if req.d_max_values is not None:
            conf = score_ordering_confidences(scores, req.top_k, req.d_max_values)
            names = [n for n, _ in sorted(scores.as_dict().items(), key=lambda kv: -kv[1])]
            return ConfidenceResponse(members=names[: req.top_k], k=req.top_k, confidence=conf)
        cand = score_ordering(scores, req.d_max, req.alpha)
        return CandidateResponse(**cand.to_json())

    dag = _graph(req.graph)
    if req.method == "smooth_traversal":
        res = smooth_traversal(scores, dag, req.target, parent_mode=req.parent_mode, all_nodes=req.all_nodes)
    else:
        res = classic_traversal_result(scores, dag, req.target, req.threshold)
    return RcaResponse(**res.to_json())


def handle_perturb(req: PerturbRequest) -> PerturbResponse:
    dag = _graph(req.graph)
    out = perturb_graph(dag, req.target_shd, np.random.default_rng(req.seed))
    return PerturbResponse(graph=GraphModel(**out.to_dict()), shd=structural_hamming_distance(dag, out))


def handle_simulate(req: SimulateRequest) -> SimulateResponse:
    rng = np.random.default_rng(req.seed)
    config = ScmConfig(n_nodes=req.nodes, polytree=req.polytree, linear_probability=req.linear_probability)
    scm = sample_random_scm(config, rng)
    normal = sample_normal(scm, req.samples, rng)
    root = scm.nodes[int(rng.integers(len(scm.nodes)))]
    desc = [n for n in scm.dag.topological_order() if n in descendants(scm.dag, root)]
    target = desc[int(rng.integers(len(desc)))]
    row, _ = inject_anomaly(scm, root, req.strength, normal.std(axis=0), rng)
    truth = {"root_cause": root, "target": target, "strength": req.strength, "seed": req.seed}
    return SimulateResponse(
        scm=scm.to_dict(),
        variable_names=list(scm.nodes),
        normal=normal.tolist(),
        anomalous=row.tolist(),
        truth=truth,
    )


def handle_bench(req: ExperimentConfig) -> dict:
    return run_experiment(req).to_dict()


app = FastAPI(title="itrca", version=__version__)


@app.exception_handler(GraphError)
@app.exception_handler(ScoringError)
@app.exception_handler(MisalignedScoresError)
@app.exception_handler(MaxRetriesError)
async def _bad_input(_: Request, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": f"{type(exc).__name__}: {exc}"})


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/score", response_model=ScoreResponse)
def score(req: ScoreRequest) -> ScoreResponse:
    return handle_score(req)


@app.post("/analyze", response_model=RcaResponse | CandidateResponse | ConfidenceResponse)
def analyze(req: AnalyzeRequest):
    try:
        return handle_analyze(req)
    except INPUT_ERRORS as exc:
        raise HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}") from exc


@app.post("/perturb", response_model=PerturbResponse)
def perturb(req: PerturbRequest) -> PerturbResponse:
    try:
        return handle_perturb(req)
    except INPUT_ERRORS as exc:
        raise HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}") from exc


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest) -> SimulateResponse:
    return handle_simulate(req)


@app.post("/bench")
def bench(req: ExperimentConfig) -> dict:
    return handle_bench(req)
