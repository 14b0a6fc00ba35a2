"""Operator command line: calibrate, sanitize, keywords, score, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Configuration lives in a JSON file with unknown keys rejected; the API
credential is only ever read from an environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .client import EndpointConfig, HttpChatClient, MockChatModel
from .evaluation import (
    REPORT_COLUMNS,
    aggregate,
    emit_report,
    load_dataset,
    run_experiment,
)
from .keywords import (
    ReleaseMethod,
    build_histogram,
    topk_dp,
    topk_ndp,
)
from .mechanisms import ClipBounds
from .metrics import all_metrics
from .pipeline import PipelineConfig, PipelineStageError, budget_report, run_pipeline
from .rewriting import (
    DEFAULT_PARAPHRASE_TEMPLATE,
    DegenerateBoundsError,
    RewriteSchedule,
    calibrate_bounds,
    paraphrase_group_from_json,
)

DEFAULT_TEMPERATURE_GRID = (0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "m", "k", "temperature", "schedule", "release_method", "epsilon2", "bounds",
    "mode", "seed", "max_tokens", "prompt_template", "model", "use_mock", "mock_seed",
    "client", "retry_on_leakage", "fallback_to_exemplar", "audit_path",
}
_BOUNDS_KEYS = {"b_min", "b_max", "unit_epsilon"}
_CLIENT_KEYS = {"base_url", "model", "timeout_s", "max_inflight", "api_key_env", "system_prompt"}


def _reject_unknown(doc: dict, allowed: set[str], context: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


def _parse_bounds(doc: dict) -> ClipBounds:
    _reject_unknown(doc, _BOUNDS_KEYS, "bounds")
    if "unit_epsilon" in doc:
        if "b_min" in doc or "b_max" in doc:
            raise ConfigError("bounds: give either unit_epsilon or b_min/b_max, not both")
        return ClipBounds.from_unit_epsilon(float(doc["unit_epsilon"]))
    try:
        return ClipBounds(float(doc["b_min"]), float(doc["b_max"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bounds: {exc}") from exc


def parse_schedule(spec: str) -> RewriteSchedule:
    try:
        low, high, step = (float(x) for x in spec.split(":"))
        return RewriteSchedule.from_range(low, high, step)
    except ValueError as exc:
        raise ConfigError(f"invalid schedule {spec!r} (expected low:high:step)") from exc


def load_cli_config(path: str) -> tuple[PipelineConfig, object, str | None]:
    """Read the JSON config file into a pipeline config plus chat client."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "config")

    if "bounds" not in doc:
        raise ConfigError("config requires bounds")
    bounds = _parse_bounds(doc["bounds"])

    schedule: RewriteSchedule | float
    if "schedule" in doc:
        schedule = parse_schedule(doc["schedule"])
        m = doc.get("m", schedule.total)
    else:
        schedule = float(doc.get("temperature", 1.0))
        m = doc.get("m", 10)

    method_name = str(doc.get("release_method", "ndp")).upper()
    if method_name not in ("NDP", "DP"):
        raise ConfigError(f"release_method must be ndp or dp, got {method_name!r}")

    try:
        config = PipelineConfig(
            bounds=bounds,
            m=int(m),
            k=int(doc.get("k", 10)),
            schedule=schedule,
            release_method=ReleaseMethod(method_name),
            epsilon2=float(doc["epsilon2"]) if "epsilon2" in doc else None,
            mode=str(doc.get("mode", "blackbox")),
            seed=int(doc.get("seed", 0)),
            max_tokens=int(doc.get("max_tokens", 64)),
            prompt_template=str(doc.get("prompt_template", DEFAULT_PARAPHRASE_TEMPLATE)),
            model=str(doc.get("model", "mock")),
            retry_on_leakage=int(doc.get("retry_on_leakage", 0)),
            fallback_to_exemplar=bool(doc.get("fallback_to_exemplar", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if doc.get("use_mock", False):
        client: object = MockChatModel(seed=int(doc.get("mock_seed", 0)))
    else:
        client_doc = doc.get("client")
        if not isinstance(client_doc, dict):
            raise ConfigError("config requires a client section unless use_mock is true")
        _reject_unknown(client_doc, _CLIENT_KEYS, "client")
        try:
            endpoint = EndpointConfig(
                base_url=client_doc["base_url"],
                model=client_doc.get("model", config.model),
                timeout_s=float(client_doc.get("timeout_s", 30.0)),
                max_inflight=int(client_doc.get("max_inflight", 4)),
                api_key_env=client_doc.get("api_key_env", "PROMPTSAN_API_KEY"),
                system_prompt=client_doc.get("system_prompt"),
            )
        except KeyError as exc:
            raise ConfigError(f"client config missing {exc}") from exc
        client = HttpChatClient(endpoint)
        if "model" not in doc:
            config = replace(config, model=endpoint.model)

    return config, client, doc.get("audit_path")


def cmd_calibrate(args: argparse.Namespace) -> int:
    try:
        with open(args.samples, encoding="utf-8") as fh:
            samples = [float(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        print(f"error: cannot read samples: {exc}", file=sys.stderr)
        return 2
    try:
        bounds = calibrate_bounds(samples)
    except (ValueError, DegenerateBoundsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"b_min": bounds.b_min, "b_max": bounds.b_max}, fh, indent=2)
        fh.write("\n")
    print(f"wrote bounds [{bounds.b_min:.6g}, {bounds.b_max:.6g}] to {args.out}")
    return 0


def _read_prompt(spec: str) -> str:
    if spec.startswith("@"):
        with open(spec[1:], encoding="utf-8") as fh:
            return fh.read().strip()
    return spec


def cmd_sanitize(args: argparse.Namespace) -> int:
    try:
        config, client, audit_path = load_cli_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.schedule is not None:
            schedule = parse_schedule(args.schedule)
            config = replace(config, schedule=schedule, m=schedule.total)
        prompt = _read_prompt(args.prompt)
        if not prompt:
            raise ConfigError("prompt is empty")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run_pipeline(
            prompt, config, client, audit_path=args.audit or audit_path
        )
    except PipelineStageError as exc:
        trail = {k: str(v) for k, v in exc.partial.items()}
        print(f"error: {exc}\npartial trail: {json.dumps(trail)}", file=sys.stderr)
        return 1
    print(json.dumps(result.to_json_dict(), indent=2, ensure_ascii=False))
    if args.report:
        print(budget_report(result), file=sys.stderr)
    return 0


def cmd_keywords(args: argparse.Namespace) -> int:
    try:
        with open(args.group, encoding="utf-8") as fh:
            group = paraphrase_group_from_json(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: cannot read group: {exc}", file=sys.stderr)
        return 2
    hist = build_histogram(group)
    if args.method == "dp":
        if args.epsilon2 is None:
            print("error: --epsilon2 is required for the dp method", file=sys.stderr)
            return 2
        try:
            release = topk_dp(hist, args.k, args.epsilon2, np.random.default_rng(args.seed))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    else:
        release = topk_ndp(hist, args.k)
    print(
        json.dumps(
            {"histogram": hist.to_json_dict(), "release": release.to_json_dict()},
            indent=2,
            ensure_ascii=False,
        )
    )
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    print(json.dumps(all_metrics(args.reference, args.hypothesis), indent=2))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        config, client, _ = load_cli_config(args.config)
        methods = args.methods.split(",") if args.methods else ["group-ndp"]
        temperatures = (
            tuple(float(t) for t in args.temperatures.split(","))
            if args.temperatures
            else DEFAULT_TEMPERATURE_GRID
        )
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    sample = (args.sample_n, args.sample_seed) if args.sample_n is not None else None
    try:
        load = load_dataset(args.dataset, args.format, sample=sample)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: cannot load dataset: {exc}", file=sys.stderr)
        return 2
    for err in load.errors:
        print(f"dataset warning: {err}", file=sys.stderr)
    if load.error_fraction() > 0.01:
        print(
            f"error: {len(load.errors)} malformed records exceed the 1% threshold",
            file=sys.stderr,
        )
        return 1
    if not load.records:
        print("error: dataset is empty", file=sys.stderr)
        return 2

    try:
        rows = run_experiment(
            load.records,
            config,
            client,
            methods=methods,
            temperatures=temperatures,
            repeats=args.repeats,
            seed=config.seed,
            audit_path=args.audit,
        )
    except (PipelineStageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failed = sum(1 for r in rows if r.failed)
    if failed:
        print(f"warning: {failed} rows failed and were excluded", file=sys.stderr)
    emit_report(aggregate(rows), args.out)
    print(f"wrote {args.out} ({', '.join(REPORT_COLUMNS[:2])}, ... columns)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptsan",
        description="Differentially private prompt sanitization via group text rewriting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="derive clip bounds from a logit sample file")
    p.add_argument("--samples", required=True, help="text file, one logit per line")
    p.add_argument("--out", required=True, help="output JSON path for the bounds")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sanitize", help="run the three-stage pipeline on one prompt")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--prompt", required=True, help="prompt text, or @file to read from disk")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--schedule", default=None, help="non-uniform schedule low:high:step")
    p.add_argument("--audit", default=None, help="append the result to this JSONL file")
    p.add_argument("--report", action="store_true", help="print the budget report to stderr")
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("keywords", help="extract and release keywords from a group JSON")
    p.add_argument("--group", required=True, help="ParaphraseGroup JSON file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--method", choices=("ndp", "dp"), default="ndp")
    p.add_argument("--epsilon2", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_keywords)

    p = sub.add_parser("score", help="similarity metrics between two texts")
    p.add_argument("--reference", required=True)
    p.add_argument("--hypothesis", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="run the integrated QA evaluation experiment")
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", required=True, choices=("csqa_jsonl", "docvqa_json"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--methods", default=None, help="comma-separated sanitizer names")
    p.add_argument("--temperatures", default=None, help="comma-separated grid override")
    p.add_argument("--sample-n", type=int, default=None)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--audit", default=None, help="per-item JSONL audit path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
