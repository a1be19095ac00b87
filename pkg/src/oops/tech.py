"""Server-side technology analysis and the role preamble built from it."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FATAL_ERRORS, AgentError
from .llm import Gateway, ask_structured, user
from .tools import REPO_TOOLS, ToolHost

PREAMBLE_TEMPLATE = (
    "You are an AI assistant specialized in analyzing web projects developed using "
    "{language} and the {framework} framework."
)
ANALYZER_PREAMBLE = "You are an AI assistant specialized in analyzing web projects."

TECH_SCHEMA = {
    "type": "object",
    "properties": {
        "reasoning": {"type": "string"},
        "language": {"type": "string", "description": "Dominant server-side programming language"},
        "framework": {"type": "string", "description": "Dominant server-side web framework"},
        "evidence": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"path": {"type": "string"}, "note": {"type": "string"}},
                "required": ["path", "note"],
            },
        },
    },
    "required": ["language", "framework"],
}

TECH_PROMPT = (
    "Explore this project with the available tools (list directories, read files, search files) "
    "and identify the programming language and the web development framework used to implement "
    "its server-side REST API. If several technologies are present, report the dominant "
    "server-side pair. Cite the files that support your conclusion as evidence, using paths "
    "relative to the project root.\n\n"
    "Think step by step, then use the output tool to report the language, the framework and your evidence."
)


@dataclass(frozen=True)
class TechProfile:
    language: str
    framework: str
    evidence: tuple[tuple[str, str], ...] = field(default=())

    @classmethod
    def unknown(cls) -> "TechProfile":
        return cls("unknown", "unknown")

    def to_json(self) -> dict:
        return {
            "language": self.language,
            "framework": self.framework,
            "evidence": [{"path": p, "note": n} for p, n in self.evidence],
        }


def role_preamble(profile: TechProfile) -> str:
    return PREAMBLE_TEMPLATE.format(language=profile.language, framework=profile.framework)


def analyze_technology(
    root: ToolHost | str,
    gateway: Gateway,
    *,
    max_rounds: int = 16,
    stage: str = "tech_analysis",
) -> TechProfile:
    """Identify the language/framework pair; degrades to ``unknown``."""
    tool_host = root if isinstance(root, ToolHost) else ToolHost(root)
    request = gateway.request(
        ANALYZER_PREAMBLE, [user(TECH_PROMPT)], tools=REPO_TOOLS, output_schema=TECH_SCHEMA
    )
    try:
        args, _ = ask_structured(gateway, request, tool_host, max_rounds=max_rounds, stage=stage)
    except FATAL_ERRORS:
        raise
    except AgentError:
        return TechProfile.unknown()
    language = args.get("language", "").strip() or "unknown"
    framework = args.get("framework", "").strip() or "unknown"
    evidence = tuple(
        (e["path"], e.get("note", ""))
        for e in args.get("evidence") or ()
        if isinstance(e, dict) and isinstance(e.get("path"), str) and tool_host.is_repo_file(e["path"])
    )
    return TechProfile(language, framework, evidence)
