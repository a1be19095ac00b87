"""Static OpenAPI 3.0.4 generation for REST API repositories using LLM agents."""

from .evaluation import MetricsReport, score
from .extraction import ApiDependencyGraph, ApiEntry, EndpointMethod, normalize_path
from .llm import ChatTranscript, Gateway, UsageReport
from .oas import serialize, upgrade_to_304, validate
from .pipeline import RunConfig, RunReport, generate_openapi
from .repair import RepairReport, expand_refs, fix_syntax
from .synthesis import correct_semantics, merge_specs, rebuild_references

__version__ = "0.1.0"

__all__ = [
    "ApiDependencyGraph",
    "ApiEntry",
    "ChatTranscript",
    "EndpointMethod",
    "Gateway",
    "MetricsReport",
    "RepairReport",
    "RunConfig",
    "RunReport",
    "UsageReport",
    "correct_semantics",
    "expand_refs",
    "fix_syntax",
    "generate_openapi",
    "merge_specs",
    "normalize_path",
    "rebuild_references",
    "score",
    "serialize",
    "upgrade_to_304",
    "validate",
]
