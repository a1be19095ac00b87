"""End-to-end orchestration: repository in, OpenAPI 3.0.4 document out."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from .diagnostics import Diagnostics
from .errors import FATAL_ERRORS, AgentError, OopsError, PipelineError, UnsupportedConstruct
from .extraction import (
    REF,
    ApiDependencyGraph,
    EndpointMethod,
    build_graph,
    dedup_entries,
    detect_entries,
    extract_endpoint_methods,
    max_dependency_depth,
    resolve_handler_files,
    pmap,
)
from .inventory import enumerate_files, iter_text_files, may_contain_api_entries
from .llm import ChatTranscript, Gateway, OpenAIBackend, UsageReport
from .oas import OpenApiDoc, serialize, upgrade_to_304, validate
from .synthesis import REQUEST, RESPONSE, FragmentSpec, generate_fragment, merge_specs, rebuild_references
from .tech import TechProfile, analyze_technology, role_preamble
from .tools import ToolHost

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-5-mini"
MAX_PARALLELISM = 8

# stage -> overhead group, mirroring how cost is usually broken down
EXTRACTION_STAGES = ("tech_analysis", "file_filter", "entry_detection", "dependency_analysis", "endpoint_extraction")
GENERATION_STAGES = ("request_generation", "response_generation")
PHASES = {"endpoint_extraction": EXTRACTION_STAGES, "specification_generation": GENERATION_STAGES}


def default_parallelism() -> int:
    return max(1, min(os.cpu_count() or 1, MAX_PARALLELISM))


@dataclass
class RunConfig:
    repo_root: str = "."
    model_id: str = DEFAULT_MODEL
    base_url: str = DEFAULT_BASE_URL
    api_key: str | None = None
    mode: str = "live"
    transcript_path: str | None = None
    output_path: str = "openapi.json"
    format: str = "json"
    title: str = "Generated API"
    version: str = "1.0.0"
    price_in: float = 0.0
    price_out: float = 0.0
    parallelism: int = field(default_factory=default_parallelism)
    excludes: list[str] = field(default_factory=list)
    emit_entries: str | None = None
    refine_budget: int = 4

    def check(self) -> list[str]:
        """Problems that make the configuration unusable."""
        problems = []
        if self.mode not in ("live", "record", "replay"):
            problems.append(f"mode must be live, record or replay, not {self.mode!r}")
        if self.format not in ("json", "yaml"):
            problems.append(f"format must be json or yaml, not {self.format!r}")
        if self.mode in ("record", "replay") and not self.transcript_path:
            problems.append(f"{self.mode} mode needs a transcript path")
        if self.mode == "replay" and self.transcript_path and not Path(self.transcript_path).is_file():
            problems.append(f"transcript {self.transcript_path} does not exist")
        if self.mode == "record" and self.transcript_path:
            parent = Path(self.transcript_path).resolve().parent
            if not parent.is_dir() or not os.access(parent, os.W_OK):
                problems.append(f"transcript {self.transcript_path} is not writable")
        if self.parallelism < 1:
            problems.append("parallelism must be at least 1")
        if self.price_in < 0 or self.price_out < 0:
            problems.append("prices must be non-negative")
        if self.refine_budget < 1:
            problems.append("refine budget must be at least 1")
        root = Path(self.repo_root)
        if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
            problems.append(f"repository root {self.repo_root} is not a readable directory")
        return problems


def make_gateway(config: RunConfig, backend=None) -> Gateway:
    transcript = None
    if config.mode == "replay":
        transcript = ChatTranscript.load(config.transcript_path)
    elif config.mode == "record":
        transcript = ChatTranscript.for_recording(config.transcript_path)
    if backend is None and config.mode != "replay":
        backend = OpenAIBackend(config.base_url, config.api_key)
    return Gateway(
        backend,
        mode=config.mode,
        transcript=transcript,
        model_id=config.model_id,
        price_in=config.price_in,
        price_out=config.price_out,
    )


@dataclass
class RunReport:
    usage: UsageReport = field(default_factory=UsageReport)
    stage_usage: dict[str, UsageReport] = field(default_factory=dict)
    phase_usage: dict[str, UsageReport] = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    repairs: dict[str, dict] = field(default_factory=dict)
    max_dependency_depth: int = 0
    technology: TechProfile = field(default_factory=TechProfile.unknown)
    files_total: int = 0
    files_kept: int = 0
    endpoints: int = 0
    violations: list[str] = field(default_factory=list)
    # endpoint methods and dependency graph; written separately on request
    entries: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "usage": self.usage.to_json(),
            "stage_usage": {k: v.to_json() for k, v in self.stage_usage.items()},
            "phase_usage": {k: v.to_json() for k, v in self.phase_usage.items()},
            "warnings": [w.to_json() for w in self.warnings],
            "repairs": self.repairs,
            "max_dependency_depth": self.max_dependency_depth,
            "technology": self.technology.to_json(),
            "files_total": self.files_total,
            "files_kept": self.files_kept,
            "endpoints": self.endpoints,
            "violations": list(self.violations),
        }


@dataclass
class Extraction:
    endpoints: list[EndpointMethod]
    graph: ApiDependencyGraph
    profile: TechProfile
    preamble: str
    tool_host: ToolHost
    files_total: int = 0
    files_kept: int = 0


class _Stage:
    """Wraps fatal errors with the name of the stage that raised them."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, (OopsError, OSError)):
            raise PipelineError(self.name, exc) from exc
        return False


def extract_endpoints(
    root: str | os.PathLike,
    config: RunConfig,
    gateway: Gateway,
    diagnostics: Diagnostics,
) -> Extraction:
    """Inventory, technology analysis and endpoint-method extraction."""
    with _Stage("inventory"):
        files = enumerate_files(root, config.excludes)
        text_files = list(iter_text_files(files))
    tool_host = ToolHost(root, config.excludes)
    if not text_files:
        diagnostics.warn("inventory", f"no text files found under {root}; the document will be empty")
        return Extraction([], ApiDependencyGraph(), TechProfile.unknown(), role_preamble(TechProfile.unknown()), tool_host, len(files))

    with _Stage("tech_analysis"):
        profile = analyze_technology(tool_host, gateway)
    if profile.language == "unknown":
        diagnostics.warn("tech_analysis", "could not identify the server-side technology")
    preamble = role_preamble(profile)
    par = config.parallelism

    with _Stage("file_filter"):
        verdicts = pmap(lambda f: may_contain_api_entries(f, gateway, preamble), text_files, par)
        kept = [f for f, (keep, _) in zip(text_files, verdicts) if keep]

    def detect(f):
        try:
            return detect_entries(f, gateway, preamble, diagnostics=diagnostics)
        except FATAL_ERRORS:
            raise
        except AgentError as exc:
            diagnostics.warn("entry_detection", f"skipped {f.rel_path}: {exc}")
            return []

    with _Stage("entry_detection"):
        entries = dedup_entries(e for found in pmap(detect, kept, par) for e in found)

    def resolve(e):
        try:
            return resolve_handler_files(e, gateway, tool_host, preamble, diagnostics=diagnostics)
        except FATAL_ERRORS:
            raise
        except AgentError as exc:
            diagnostics.warn("dependency_analysis", f"could not resolve {e.handler!r} in {e.file}: {exc}")
            return []

    with _Stage("dependency_analysis"):
        refs = [e for e in entries if e.tag == REF]
        resolved = dict(zip(refs, pmap(resolve, refs, par)))
        graph = build_graph(entries, lambda e: resolved.get(e, []), diagnostics)

    with _Stage("endpoint_extraction"):
        endpoints = extract_endpoint_methods(
            graph, gateway, preamble, tool_host.read_file, parallelism=par, diagnostics=diagnostics
        )
    if not endpoints:
        diagnostics.warn("endpoint_extraction", "no endpoint methods found")
    return Extraction(endpoints, graph, profile, preamble, tool_host, len(files), len(kept))


def generate_openapi(
    root: str | os.PathLike,
    config: RunConfig,
    gateway: Gateway | None = None,
) -> tuple[OpenApiDoc, RunReport]:
    """Run the whole pipeline and return the document with its run report."""
    gateway = gateway if gateway is not None else make_gateway(config)
    diagnostics = Diagnostics()
    found = extract_endpoints(root, config, gateway, diagnostics)
    endpoints = found.endpoints
    par = config.parallelism

    def fragments(kind: str) -> dict[tuple[str, str], FragmentSpec]:
        stage = f"{kind}_generation"

        def one(em: EndpointMethod) -> FragmentSpec:
            return generate_fragment(
                em,
                kind,
                gateway,
                found.tool_host,
                found.preamble,
                found.tool_host.read_file,
                budget=config.refine_budget,
                diagnostics=diagnostics,
                stage=stage,
            )

        with _Stage(stage):
            return {(em.path, em.method): f for em, f in zip(endpoints, pmap(one, endpoints, par))}

    requests = fragments(REQUEST)
    responses = fragments(RESPONSE)

    with _Stage("merge"):
        draft = merge_specs(
            endpoints, requests, responses, title=config.title, version=config.version, diagnostics=diagnostics
        )
    try:
        doc = upgrade_to_304(draft)
    except UnsupportedConstruct as exc:
        raise PipelineError("upgrade", exc) from exc
    with _Stage("rebuild_references"):
        doc = rebuild_references(doc)
    violations = [str(v) for v in validate(doc)]
    for v in violations:
        diagnostics.warn("validate", v)

    report = RunReport(
        usage=gateway.usage_report(),
        stage_usage={s: gateway.usage_report(s) for s in gateway.stages()},
        warnings=diagnostics.warnings,
        repairs={
            em.label: {
                "request": requests[(em.path, em.method)].report.to_json(),
                "response": responses[(em.path, em.method)].report.to_json(),
            }
            for em in endpoints
        },
        max_dependency_depth=max_dependency_depth(found.graph),
        technology=found.profile,
        files_total=found.files_total,
        files_kept=found.files_kept,
        endpoints=len(endpoints),
        violations=violations,
        entries={"endpoints": [em.to_json() for em in endpoints], "graph": found.graph.to_json()},
    )
    report.phase_usage = phase_usage(gateway)
    return doc, report


def phase_usage(gateway: Gateway) -> dict[str, UsageReport]:
    out = {}
    for phase, stages in PHASES.items():
        usages = [u for s, u in gateway.usages() if s in stages]
        out[phase] = UsageReport.from_usages(usages, gateway.price_in, gateway.price_out)
    return out


def report_path(output_path: str | os.PathLike) -> Path:
    p = Path(output_path)
    return p.with_name(p.stem + ".report.json")


def write_outputs(doc: dict, report: RunReport, config: RunConfig) -> tuple[Path, Path]:
    out = Path(config.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize(doc, config.format), encoding="utf-8")
    rp = report_path(out)
    rp.write_text(json.dumps(report.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return out, rp
