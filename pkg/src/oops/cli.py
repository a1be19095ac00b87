"""Command-line interface: ``oops generate|entries|eval|report``."""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .diagnostics import Diagnostics
from .errors import OopsError, PipelineError
from .evaluation import load_document, score, score_many
from .llm import ChatTranscript, UsageReport
from .pipeline import PHASES, RunConfig, extract_endpoints, generate_openapi, make_gateway, write_outputs

log = logging.getLogger("oops")

EXIT_OK, EXIT_FATAL, EXIT_CONFIG = 0, 1, 2
ENV_VARS = {"api_key": "OOPS_API_KEY", "base_url": "OOPS_BASE_URL"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


class ConfigError(Exception):
    pass


def _coerce(name: str, value):
    kind = type(getattr(RunConfig(), name))
    if name == "excludes":
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        return list(value)
    if value is None:
        return None
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return str(value)


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[oops]\n" + fh.read(), source=path)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for key, value in parser.items("oops"):
        name = key.replace("-", "_")
        if name not in _FIELDS:
            raise ConfigError(f"{path}: unknown setting {key!r}")
        out[name] = _coerce(name, value.strip().strip('"').strip("'"))
    return out


def build_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Flags override the environment, which overrides the config file."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name, var in ENV_VARS.items():
        if environ.get(var):
            values[name] = environ[var]
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None and flag != []:
            values[name] = _coerce(name, flag)
    return RunConfig(**values)


# --- parser -----------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("repo_root", nargs="?", help="repository to analyze (default: current directory)")
    p.add_argument("--config", help="key=value settings file; flags and environment take precedence")
    p.add_argument("--model-id", dest="model_id", help="model name sent to the backend")
    p.add_argument("--base-url", dest="base_url", help="OpenAI-compatible API base URL (env OOPS_BASE_URL)")
    p.add_argument("--api-key", dest="api_key", help="API key (prefer env OOPS_API_KEY)")
    p.add_argument("--mode", choices=("live", "record", "replay"), help="where model responses come from")
    p.add_argument("--transcript", "--transcript-path", dest="transcript_path", help="record/replay transcript (JSONL)")
    p.add_argument("--exclude", dest="excludes", action="append", default=[], metavar="GLOB",
                   help="skip matching paths; repeatable")
    p.add_argument("--parallelism", type=int, help="concurrent model calls (default: CPUs, at most 8)")
    p.add_argument("--price-in", dest="price_in", type=float, help="cost per input token")
    p.add_argument("--price-out", dest="price_out", type=float, help="cost per output token")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging; repeat for debug")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oops", description="Generate OpenAPI 3.0.4 documents from REST API source code.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="analyze a repository and write openapi.json plus a run report")
    _add_run_flags(gen)
    gen.add_argument("-o", "--output", "--output-path", dest="output_path", help="output file (default openapi.json)")
    gen.add_argument("--format", choices=("json", "yaml"), help="output format (default json)")
    gen.add_argument("--title", help="info.title of the document")
    gen.add_argument("--version", help="info.version of the document")
    gen.add_argument("--refine-budget", dest="refine_budget", type=int, help="rounds per fragment before fallback (default 4)")
    gen.add_argument("--emit-entries", dest="emit_entries", metavar="FILE", help="also write endpoint methods and the dependency graph")

    ent = sub.add_parser("entries", help="print extracted endpoint methods and the dependency graph")
    _add_run_flags(ent)

    ev = sub.add_parser("eval", help="score generated documents against ground truth")
    ev.add_argument("--generated", action="append", required=True, help="generated document; repeat for several pairs")
    ev.add_argument("--truth", action="append", required=True, help="ground-truth document, paired in order with --generated")
    ev.add_argument("--format", choices=("table", "json"), default="table")

    rep = sub.add_parser("report", help="summarize call counts, token usage and cost")
    rep.add_argument("source", help="run report (*.report.json) or transcript (*.jsonl)")
    rep.add_argument("--price-in", dest="price_in", type=float, default=0.0, help="cost per input token (transcripts only)")
    rep.add_argument("--price-out", dest="price_out", type=float, default=0.0, help="cost per output token (transcripts only)")
    rep.add_argument("--format", choices=("table", "json"), default="table")
    return parser


# --- commands ---------------------------------------------------------------------


def _prepare(args) -> RunConfig:
    config = build_config(args)
    if args.repo_root:
        config.repo_root = args.repo_root
    problems = config.check()
    if problems:
        raise ConfigError("; ".join(problems))
    return config


def cmd_generate(config: RunConfig, gateway=None) -> int:
    gateway = gateway or make_gateway(config)
    doc, report = generate_openapi(config.repo_root, config, gateway)
    out, rp = write_outputs(doc, report, config)
    log.info("wrote %s and %s", out, rp)
    if config.emit_entries:
        Path(config.emit_entries).write_text(json.dumps(report.entries, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    for w in report.warnings:
        print(f"warning [{w.stage}] {w.message}", file=sys.stderr)
    return EXIT_OK


def cmd_entries(config: RunConfig, gateway=None, out=None) -> int:
    out = out or sys.stdout
    gateway = gateway or make_gateway(config)
    diagnostics = Diagnostics()
    found = extract_endpoints(config.repo_root, config, gateway, diagnostics)
    payload = {
        "endpoints": [em.to_json() for em in found.endpoints],
        "graph": found.graph.to_json(),
        "warnings": [w.to_json() for w in diagnostics.warnings],
    }
    out.write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_eval(generated: list[str], truth: list[str], fmt: str = "table", out=None) -> int:
    out = out or sys.stdout
    if len(generated) != len(truth):
        raise ConfigError("--generated and --truth must be given the same number of times")
    try:
        docs = [(load_document(g), load_document(t)) for g, t in zip(generated, truth)]
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load document: {exc}") from exc
    if len(docs) == 1:
        result = score(*docs[0])
    else:
        result = score_many(docs)
    out.write((json.dumps(result.to_json(), indent=2) if fmt == "json" else result.to_table()) + "\n")
    return EXIT_OK


def _usage_from_transcript(path: str, price_in: float, price_out: float) -> dict:
    transcript = ChatTranscript.load(path)
    total = UsageReport.from_usages((r.usage for _, r in transcript.entries), price_in, price_out)
    return {"usage": total.to_json(), "phase_usage": {}, "max_dependency_depth": None}


def cmd_report(source: str, price_in: float = 0.0, price_out: float = 0.0, fmt: str = "table", out=None) -> int:
    out = out or sys.stdout
    try:
        if source.endswith(".jsonl"):
            data = _usage_from_transcript(source, price_in, price_out)
        else:
            with open(source, encoding="utf-8") as fh:
                data = json.load(fh)
    except (OSError, ValueError, OopsError) as exc:
        raise ConfigError(f"cannot read {source}: {exc}") from exc
    if fmt == "json":
        out.write(json.dumps(data, indent=2) + "\n")
        return EXIT_OK
    rows = [(phase, data.get("phase_usage", {}).get(phase)) for phase in PHASES]
    rows = [(name, u) for name, u in rows if u] + [("total", data["usage"])]
    header = f"{'phase':<26} {'Calls':>6} {'Avg In':>9} {'Max In':>8} {'Avg Out':>9} {'Max Out':>8} {'Cost':>10}"
    lines = [header, "-" * len(header)]
    for name, u in rows:
        lines.append(
            f"{name:<26} {u['calls']:>6} {u['avg_in']:>9.1f} {u['max_in']:>8} {u['avg_out']:>9.1f} "
            f"{u['max_out']:>8} {u['cost']:>10.4f}"
        )
    depth = data.get("max_dependency_depth")
    if depth is not None:
        lines.append(f"Max Dep: {depth}")
    out.write("\n".join(lines) + "\n")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbosity = getattr(args, "verbose", 0)
    logging.basicConfig(
        level=logging.DEBUG if verbosity > 1 else logging.INFO if verbosity else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "generate":
            return cmd_generate(_prepare(args))
        if args.command == "entries":
            return cmd_entries(_prepare(args))
        if args.command == "eval":
            return cmd_eval(args.generated, args.truth, args.format)
        if args.command == "report":
            return cmd_report(args.source, args.price_in, args.price_out, args.format)
    except ConfigError as exc:
        print(f"oops: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"oops: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except OopsError as exc:
        # transcript that exists but cannot be parsed, and similar setup faults
        print(f"oops: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command!r}")
    return EXIT_CONFIG


__all__ = ["main", "build_parser", "build_config", "cmd_generate", "cmd_entries", "cmd_eval", "cmd_report"]
