"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Machine-readable
output goes to stdout (or files); messages go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import __version__
from .bench import BenchInterrupted, ExperimentConfig, MetricsReport, run_experiment
from .client import HttpClient, LocalClient, ServiceError
from .graph import GraphError
from .schemas import ALL_METHODS, GRAPH_METHODS, AnalyzeRequest, PerturbRequest, ScoreRequest, SimulateRequest, normalize_method
from .scoring import Dataset, ScoringError, write_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


def _client(args):
    return HttpClient(args.server) if getattr(args, "server", None) else LocalClient()


def _emit(payload: dict, out: str | None = None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise RuntimeFailure(f"cannot read {path}: {exc}") from exc


def _load_graph(path: str) -> dict:
    payload = _load_json(path)
    # a serialized SCM carries its graph under "dag"
    return payload["dag"] if "dag" in payload else payload


def _score_request(args) -> ScoreRequest:
    try:
        data = Dataset.from_csv(args.data, anomalous_row=args.anomalous_row, anomalous_path=args.anomalous)
    except (OSError, ScoringError) as exc:
        raise RuntimeFailure(f"malformed data: {exc}") from exc
    return ScoreRequest(
        variable_names=list(data.variable_names),
        normal=data.normal_matrix.tolist(),
        anomalous=data.anomalous_row.tolist(),
        feature=args.feature,
    )


def cmd_score(args) -> int:
    _emit(_client(args).call("score", _score_request(args)), args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    method = normalize_method(args.method)
    if method in GRAPH_METHODS and not args.graph:
        raise UsageError(f"--method {args.method} requires --graph")
    if method == "classic_traversal" and not args.target:
        raise UsageError("--method classic-traversal requires --target")
    if method == "score_ordering" and args.dmax is None and not args.dmax_values:
        raise UsageError("--method score-ordering requires --dmax (or --dmax-values with --top-k)")
    if bool(args.data) == bool(args.scores):
        raise UsageError("give exactly one of --data and --scores")

    fields = dict(
        method=method,
        target=args.target,
        d_max=args.dmax,
        alpha=args.alpha,
        threshold=args.threshold,
        parent_mode=args.parent_mode,
        all_nodes=args.all_nodes,
        top_k=args.top_k,
        d_max_values=[int(v) for v in args.dmax_values.split(",")] if args.dmax_values else None,
    )
    if args.graph:
        fields["graph"] = _load_graph(args.graph)
    if args.scores:
        payload = _load_json(args.scores)
        fields["scores"] = payload.get("scores", payload)
        fields["k"] = payload.get("k")
    else:
        fields["data"] = _score_request(args)
    try:
        request = AnalyzeRequest(**fields)
    except ValidationError as exc:
        raise UsageError(_validation_message(exc)) from exc
    _emit(_client(args).call("analyze", request), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        request = SimulateRequest(
            nodes=args.nodes,
            polytree=args.polytree,
            strength=args.strength,
            seed=args.seed,
            samples=args.samples,
            linear_probability=args.linear_probability,
        )
    except ValidationError as exc:
        raise UsageError(_validation_message(exc)) from exc
    result = _client(args).call("simulate", request)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "scm.json").write_text(json.dumps(result["scm"]) + "\n", encoding="utf-8")
        write_csv(out / "normal.csv", result["variable_names"], result["normal"])
        write_csv(out / "anomalous.csv", result["variable_names"], [result["anomalous"]])
        (out / "truth.json").write_text(json.dumps(result["truth"], indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise RuntimeFailure(f"cannot write outputs: {exc}") from exc
    print(f"wrote scm.json, normal.csv, anomalous.csv, truth.json to {out}", file=sys.stderr)
    return EXIT_OK


def _write_report(report: dict | MetricsReport, out: Path, stem: str) -> None:
    if isinstance(report, dict):
        report = _report_from_dict(report)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / f"{stem}.csv").write_text(report.to_csv(), encoding="utf-8")


def _report_from_dict(payload: dict) -> MetricsReport:
    from .bench import CoverageRow, MetricRow

    return MetricsReport(
        rows=[MetricRow(**r) for r in payload["rows"]],
        coverage=[CoverageRow(**c) for c in payload["coverage"]],
        failures=payload["failures"],
        n_trials=payload["n_trials"],
        config=payload["config"],
    )


def cmd_bench(args) -> int:
    raw = _load_json(args.config)
    overrides = {"trials_per_point": args.trials, "seed": args.seed, "workers": args.workers}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_timing:
        raw["timing"] = False
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise UsageError(_validation_message(exc)) from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.log:
            Path(args.log).parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeFailure(f"cannot create output directory: {exc}") from exc
    if args.server:
        report = _report_from_dict(_client(args).call("bench", config))
    else:
        try:
            report = run_experiment(config, trial_log=args.log)
        except BenchInterrupted as exc:
            _write_report(exc.report, out, "metrics.partial")
            print(f"interrupted; partial results in {out}/metrics.partial.json", file=sys.stderr)
            return EXIT_FAIL
    _write_report(report, out, "metrics")
    print(report.summary())
    return EXIT_OK


def cmd_perturb(args) -> int:
    request = PerturbRequest(graph=_load_graph(args.graph), target_shd=args.shd, seed=args.seed)
    result = _client(args).call("perturb", request)
    _emit(result["graph"], args.out)
    print(f"SHD {result['shd']}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("itrca.service:app", host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _validation_message(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(map(str, e['loc'])) or 'input'}: {e['msg']}" for e in exc.errors())


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itrca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_server(p):
        p.add_argument("--server", help="service base URL; default runs in-process")
        return p

    def with_data(p, required=False):
        p.add_argument("--data", required=required, help="CSV with header; last row is the anomalous observation")
        p.add_argument("--anomalous", help="separate one-row CSV holding the anomalous observation")
        p.add_argument("--anomalous-row", type=int, help="index of the anomalous row inside --data")
        p.add_argument("--feature", choices=["identity", "z_score", "abs_z_score"], default="abs_z_score")

    p = with_server(sub.add_parser("simulate", help="sample a random SCM and one anomalous incident"))
    p.add_argument("--nodes", type=_positive_int, required=True)
    p.add_argument("--polytree", action="store_true")
    p.add_argument("--strength", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=_positive_int, default=1000)
    p.add_argument("--linear-probability", type=float, default=0.2)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = with_server(sub.add_parser("score", help="marginal anomaly scores of the anomalous row"))
    with_data(p, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = with_server(sub.add_parser("analyze", help="identify the root cause"))
    p.add_argument("--method", required=True, type=lambda s: s.replace("_", "-"), choices=[m.replace("_", "-") for m in ALL_METHODS])
    with_data(p)
    p.add_argument("--scores", help="JSON scores file as written by 'score'")
    p.add_argument("--graph", help="graph JSON (or scm.json)")
    p.add_argument("--target")
    p.add_argument("--dmax", type=_positive_int)
    p.add_argument("--dmax-values", help="comma-separated in-degree bounds; needs --top-k")
    p.add_argument("--top-k", type=_positive_int)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--parent-mode", choices=["max", "joint"], default="max")
    p.add_argument("--all-nodes", action="store_true", help="scan every node, not only ancestors of --target")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = with_server(sub.add_parser("bench", help="run a synthetic benchmark from a JSON config"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".", help="directory for metrics.json / metrics.csv")
    p.add_argument("--log", help="write per-trial JSON lines here")
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("--no-timing", action="store_true", help="omit runtimes so output is byte-reproducible")
    p.set_defaults(func=cmd_bench)

    p = with_server(sub.add_parser("perturb", help="misspecify a graph to an exact SHD"))
    p.add_argument("--graph", required=True)
    p.add_argument("--shd", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"itrca {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ServiceError as exc:
        print(f"itrca {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.usage else EXIT_FAIL
    except (RuntimeFailure, GraphError, ScoringError, OSError) as exc:
        print(f"itrca {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
