"""Endpoint method extraction over an API dependency graph.

An API entry binds a path fragment to a handler. Entries tagged ``REF``
dispatch to a handler implemented in another file; resolving those
handlers yields edges ``(handler_file, dispatcher_file)``. The complete
path of a ``LOCAL`` entry is assembled from its own file followed by every
file reachable along outgoing edges, in topological order.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import networkx as nx

from .diagnostics import Diagnostics
from .errors import FATAL_ERRORS, AgentError
from .inventory import RepoFile, canonical_rel_path, split_for_detection
from .llm import Gateway, ask_structured, follow_up, user
from .tools import REPO_TOOLS, ToolHost

LOCAL = "LOCAL"
REF = "REF"
HTTP_METHODS = ("GET", "POST", "PUT", "DELETE", "PATCH", "HEAD", "OPTIONS")
ALL_EXPANSION = ("GET", "POST", "PUT", "DELETE", "PATCH")

DETECTOR_MAX_ROUNDS = 8
RESOLVER_MAX_ROUNDS = 3

# --- path normalization ------------------------------------------------------

_ANGLE_PARAM = re.compile(r"<(?:[^<>:]+:)?([^<>:]+)>")
_COLON_PARAM = re.compile(r"(^|/):([A-Za-z_][\w-]*)")
_TYPED_BRACE_PARAM = re.compile(r"\{([A-Za-z_][\w-]*)\s*:[^{}]*\}")
_MULTI_SLASH = re.compile(r"/{2,}")
_BRACE_PARAM = re.compile(r"\{[^{}/]*\}")


def normalize_path(raw: str) -> str:
    """Rewrite path parameters to ``{name}`` and tidy slashes.

    >>> normalize_path("/users/:id")
    '/users/{id}'
    >>> normalize_path("/users/<int:id>/posts/")
    '/users/{id}/posts'
    """
    path = _ANGLE_PARAM.sub(lambda m: "{" + m.group(1).strip() + "}", raw)
    path = _COLON_PARAM.sub(lambda m: m.group(1) + "{" + m.group(2) + "}", path)
    path = _TYPED_BRACE_PARAM.sub(lambda m: "{" + m.group(1) + "}", path)
    path = _MULTI_SLASH.sub("/", path)
    if len(path) > 1 and path.endswith("/"):
        path = path.rstrip("/") or "/"
    return path


def endpoint_path(raw: str) -> str:
    path = normalize_path(raw.strip())
    if not path.startswith("/"):
        path = normalize_path("/" + path)
    return path


def template_shape(path: str) -> str:
    """Path with parameter names erased, for name-insensitive comparison."""
    return _BRACE_PARAM.sub("{}", normalize_path(path))


# --- domain types --------------------------------------------------------------


@dataclass(frozen=True)
class ApiEntry:
    key: str
    file: str
    path: str
    handler: str
    tag: str
    synthetic: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.tag not in (LOCAL, REF):
            raise ValueError(f"bad entry tag {self.tag!r}")
        if self.tag == REF and not self.handler:
            raise ValueError("REF entries need a handler")

    @classmethod
    def make(cls, file: str, path: str, handler: str, tag: str, synthetic: bool = False) -> "ApiEntry":
        return cls(normalize_path(path), file, path, handler.strip(), tag, synthetic)

    def to_json(self) -> dict:
        data = {"key": self.key, "file": self.file, "path": self.path, "handler": self.handler, "tag": self.tag}
        if self.synthetic:
            data["synthetic"] = True
        return data


@dataclass
class ApiDependencyGraph:
    nodes: list[str] = field(default_factory=list)
    edges: set[tuple[str, str]] = field(default_factory=set)
    file_to_entries: dict[str, list[ApiEntry]] = field(default_factory=dict)
    removed_edges: list[tuple[str, str]] = field(default_factory=list)

    def add_node(self, file: str) -> None:
        if file not in self.file_to_entries:
            self.nodes.append(file)
            self.file_to_entries[file] = []

    def handlers(self, file: str) -> set[str]:
        return {e.handler for e in self.file_to_entries.get(file, ())}

    def successors(self, file: str) -> list[str]:
        return sorted(b for a, b in self.edges if a == file)

    def descendants(self, file: str) -> set[str]:
        seen: set[str] = set()
        stack = [file]
        while stack:
            for nxt in self.successors(stack.pop()):
                if nxt not in seen and nxt != file:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def ordered_files(self, file: str) -> list[str]:
        """``file`` plus its descendants in topological (edge) order."""
        members = self.descendants(file) | {file}
        sub = nx.DiGraph()
        sub.add_nodes_from(sorted(members))
        sub.add_edges_from(sorted((a, b) for a, b in self.edges if a in members and b in members))
        return list(nx.lexicographical_topological_sort(sub))

    def local_entries(self) -> list[ApiEntry]:
        return [e for f in self.nodes for e in self.file_to_entries[f] if e.tag == LOCAL]

    def is_acyclic(self) -> bool:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return nx.is_directed_acyclic_graph(g)

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [list(e) for e in sorted(self.edges)],
            "entries": {f: [e.to_json() for e in self.file_to_entries[f]] for f in self.nodes},
            "removed_edges": [list(e) for e in self.removed_edges],
        }


@dataclass(frozen=True)
class EndpointMethod:
    path: str
    method: str
    origin: ApiEntry
    ordered_files: tuple[str, ...]

    def __post_init__(self):
        if self.method not in HTTP_METHODS:
            raise ValueError(f"bad HTTP method {self.method!r}")

    @property
    def label(self) -> str:
        return f"{self.method} {self.path}"

    def to_json(self) -> dict:
        return {
            "path": self.path,
            "method": self.method,
            "origin": self.origin.to_json(),
            "ordered_files": list(self.ordered_files),
        }


# --- dedup ------------------------------------------------------------------------


def dedup_entries(entries: Iterable[ApiEntry]) -> list[ApiEntry]:
    """Keep the first entry per (key, file)."""
    seen: set[tuple[str, str]] = set()
    out = []
    for e in entries:
        unique = (e.key, e.file)
        if unique not in seen:
            seen.add(unique)
            out.append(e)
    return out


# --- file-level entry detection --------------------------------------------------------

ENTRY_SCHEMA = {
    "type": "object",
    "properties": {
        "thoughts": {"type": "string", "description": "Step-by-step reasoning"},
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "path": {"type": "string", "description": "Path fragment bound by this routing registration"},
                    "handler": {"type": "string", "description": "Function, class or object name bound to the path"},
                    "tag": {"type": "string", "enum": [LOCAL, REF]},
                },
                "required": ["path", "handler", "tag"],
            },
        },
    },
    "required": ["thoughts", "entries"],
}
_ENTRY_CHECK = {"type": "object", "properties": {"entries": {"type": "array"}}, "required": ["entries"]}

DETECT_PROMPT = (
    "You need to extract API entries from file {file}, its content is:\n```\n{content}\n```\n\n"
    "An API entry is a routing registration that binds a path (a partial or complete request path) "
    "to a handler (the function, class or object that processes or dispatches matching requests). "
    "Tag an entry LOCAL when the handler is implemented in this file and REF when it is imported "
    "from another file. Write path parameters as /{{param}}."
)
DETECT_REFINE = (
    "These are the API entries you've found: {entries}. Continue searching for others. "
    "Output an empty list if no additional API entries exist."
)
DETECT_OUTPUT = (
    "Think step by step, and use the output tool to provide your thought process, "
    "along with a list containing the API entries."
)


def _raw_entry(file: str, item, diagnostics: Diagnostics | None) -> ApiEntry | None:
    if not isinstance(item, dict):
        _warn(diagnostics, "entry_detection", f"{file}: dropped malformed entry {item!r}")
        return None
    path = item.get("path")
    handler = item.get("handler")
    path = path if isinstance(path, str) else ""
    handler = handler.strip() if isinstance(handler, str) else ""
    tag = str(item.get("tag", "")).strip().upper()
    if (not path and not handler) or tag not in (LOCAL, REF) or (tag == REF and not handler):
        _warn(diagnostics, "entry_detection", f"{file}: dropped malformed entry {item!r}")
        return None
    return ApiEntry.make(file, path, handler, tag)


def detect_entries(
    file: RepoFile,
    gateway: Gateway,
    preamble: str,
    *,
    max_rounds: int = DETECTOR_MAX_ROUNDS,
    diagnostics: Diagnostics | None = None,
    stage: str = "entry_detection",
) -> list[ApiEntry]:
    """Iteratively ask for entries until a round yields nothing new."""
    found: list[ApiEntry] = []
    seen: set[tuple[str, str, str]] = set()
    for chunk in split_for_detection(file.content):
        base = DETECT_PROMPT.format(file=file.rel_path, content=chunk)
        for _ in range(max_rounds):
            parts = [base]
            if found:
                listed = json.dumps([{"path": e.path, "handler": e.handler, "tag": e.tag} for e in found], ensure_ascii=False)
                parts.append(DETECT_REFINE.format(entries=listed))
            parts.append(DETECT_OUTPUT)
            request = gateway.request(preamble, [user("\n\n".join(parts))], output_schema=ENTRY_SCHEMA)
            args, _ = ask_structured(gateway, request, check_schema=_ENTRY_CHECK, max_rounds=2, stage=stage)
            new = 0
            for item in args.get("entries") or ():
                entry = _raw_entry(file.rel_path, item, diagnostics)
                if entry is None:
                    continue
                ident = (entry.key, entry.handler, entry.tag)
                if ident not in seen:
                    seen.add(ident)
                    found.append(entry)
                    new += 1
            if new == 0:
                break
    return found


# --- dependency analysis -----------------------------------------------------------------

RESOLVE_SCHEMA = {
    "type": "object",
    "properties": {
        "reasoning": {"type": "string"},
        "files": {
            "type": "array",
            "items": {"type": "string", "description": "File path relative to the project root, e.g. src/routes/user.js"},
        },
    },
    "required": ["reasoning", "files"],
}
_RESOLVE_CHECK = {"type": "object", "properties": {"files": {"type": "array"}}, "required": ["files"]}

RESOLVE_PROMPT = (
    "In file {file}, I found that `{handler}` is imported to process HTTP requests to path `{path}`. "
    "Your task is to find which files implement `{handler}`. Use the tools to list directories, "
    "read files and search files as needed.\n\n"
    "Use the output tool to provide your reasoning and a list of the files you found, with each "
    "item presented as a file path relative to the project root directory (for example src/app.py)."
)
RESOLVE_REFINE = (
    "These are the file paths you've found: {files}. Some of them are not relative to the project "
    "root directory or do not exist: {errors}. Try to fix them and call the output tool again."
)


def check_repo_path(tool_host: ToolHost, path) -> str | None:
    """Error text for an invalid handler-file path, ``None`` when valid."""
    if not isinstance(path, str):
        return f"{path!r} is not a string"
    if canonical_rel_path(path) is None:
        return f"{path!r} is not a canonical path relative to the project root"
    if not tool_host.is_repo_file(path):
        return f"{path!r} does not exist"
    return None


def resolve_handler_files(
    entry: ApiEntry,
    gateway: Gateway,
    tool_host: ToolHost,
    preamble: str,
    *,
    refine_rounds: int = RESOLVER_MAX_ROUNDS,
    max_rounds: int = 16,
    diagnostics: Diagnostics | None = None,
    stage: str = "dependency_analysis",
) -> list[str]:
    """Files implementing a REF entry's handler, validated against the repo."""
    request = gateway.request(
        preamble,
        [user(RESOLVE_PROMPT.format(file=entry.file, handler=entry.handler, path=entry.path))],
        tools=REPO_TOOLS,
        output_schema=RESOLVE_SCHEMA,
    )
    valid: list[str] = []
    for round_no in range(refine_rounds):
        args, history = ask_structured(
            gateway, request, tool_host, check_schema=_RESOLVE_CHECK, max_rounds=max_rounds, stage=stage
        )
        files = args.get("files") or []
        valid, errors = [], []
        for f in files:
            err = check_repo_path(tool_host, f)
            if err is None:
                if f not in valid:
                    valid.append(f)
            else:
                errors.append(err)
        if not errors or round_no == refine_rounds - 1:
            break
        feedback = RESOLVE_REFINE.format(files=json.dumps(files, ensure_ascii=False), errors="; ".join(errors))
        request = request.with_messages(follow_up(history, feedback))
    if not valid:
        _warn(diagnostics, stage, f"EmptyResolution: no file found for handler {entry.handler!r} in {entry.file}")
    return valid


# --- graph construction ------------------------------------------------------------------


def repair_cycles(graph: ApiDependencyGraph, diagnostics: Diagnostics | None = None) -> None:
    """Break cycles by dropping the lexicographically largest edge of each
    strongly connected component until the graph is acyclic."""
    while True:
        g = nx.DiGraph()
        g.add_nodes_from(graph.nodes)
        g.add_edges_from(graph.edges)
        doomed = []
        for scc in nx.strongly_connected_components(g):
            internal = [(a, b) for a, b in graph.edges if a in scc and b in scc]
            if len(scc) > 1 or internal:
                doomed.append(max(internal))
        if not doomed:
            return
        for edge in sorted(doomed):
            graph.edges.discard(edge)
            graph.removed_edges.append(edge)
            _warn(diagnostics, "dependency_graph", f"dropped edge {edge[0]} -> {edge[1]} to break a cycle")


def build_graph(
    entries: Sequence[ApiEntry],
    resolver: Callable[[ApiEntry], Iterable[str]],
    diagnostics: Diagnostics | None = None,
) -> ApiDependencyGraph:
    graph = ApiDependencyGraph()
    for e in entries:
        graph.add_node(e.file)
        graph.file_to_entries[e.file].append(e)
    for e in entries:
        if e.tag != REF:
            continue
        for f in resolver(e):
            if f not in graph.file_to_entries or e.handler not in graph.handlers(f):
                graph.add_node(f)
                graph.file_to_entries[f].append(ApiEntry.make(f, "", e.handler, LOCAL, synthetic=True))
            graph.edges.add((f, e.file))
    repair_cycles(graph, diagnostics)
    return graph


# --- endpoint method extraction -------------------------------------------------------------

EXTRACT_SCHEMA = {
    "type": "object",
    "properties": {
        "thoughts": {"type": "string"},
        "path": {"type": "string", "description": "Complete request path, parameters written as {param}"},
        "methods": {
            "type": "object",
            "properties": {m: {"type": "boolean"} for m in HTTP_METHODS + ("ALL",)},
            "required": list(HTTP_METHODS + ("ALL",)),
            "description": "Whether each HTTP method is accepted; ALL when the route accepts any method",
        },
    },
    "required": ["thoughts", "path", "methods"],
}
_EXTRACT_CHECK = {
    "type": "object",
    "properties": {"path": {"type": "string"}, "methods": {"type": "object"}},
    "required": ["path", "methods"],
}

EXTRACT_PROMPT = (
    "In file {file}, I found that `{handler}` is bound to process HTTP requests to path `{path}`, "
    "here are the relevant files I found, starting with that file and followed by the files that "
    "mount it:\n\n{dependencies}\n\n"
    "You need to determine the full path and all acceptable HTTP methods of this API entry by "
    "joining the path prefixes contributed by the files above. Write path parameters as /{{param}}. "
    "Mark each HTTP method true or false; mark ALL true when the route accepts every method "
    "without listing them. If the entry only dispatches to other handlers and serves no requests "
    "itself, mark every method false.\n\n"
    "Think step by step, and use the output tool to provide your thought process, along with an "
    "object containing the full path and the method flags."
)


def format_dependencies(files: Sequence[str], read: Callable[[str], str]) -> str:
    return "\n\n".join(f"File {f}:\n```\n{read(f)}\n```" for f in files)


def accepted_methods(flags: dict) -> list[str]:
    accepted = [m for m in HTTP_METHODS if flags.get(m) is True]
    if flags.get("ALL") is True:
        accepted = [m for m in HTTP_METHODS if m in accepted or m in ALL_EXPANSION]
    return accepted


def extract_entry(
    entry: ApiEntry,
    graph: ApiDependencyGraph,
    gateway: Gateway,
    preamble: str,
    read: Callable[[str], str],
    *,
    stage: str = "endpoint_extraction",
) -> list[EndpointMethod]:
    ordered = tuple(graph.ordered_files(entry.file))
    prompt = EXTRACT_PROMPT.format(
        file=entry.file, handler=entry.handler, path=entry.path, dependencies=format_dependencies(ordered, read)
    )
    request = gateway.request(preamble, [user(prompt)], output_schema=EXTRACT_SCHEMA)
    args, _ = ask_structured(gateway, request, check_schema=_EXTRACT_CHECK, max_rounds=2, stage=stage)
    path = endpoint_path(args["path"])
    return [EndpointMethod(path, m, entry, ordered) for m in accepted_methods(args.get("methods") or {})]


def extract_endpoint_methods(
    graph: ApiDependencyGraph,
    gateway: Gateway,
    preamble: str,
    read: Callable[[str], str],
    *,
    parallelism: int = 1,
    diagnostics: Diagnostics | None = None,
    stage: str = "endpoint_extraction",
) -> list[EndpointMethod]:
    """One extractor call per LOCAL entry; results deduplicated by (path, method)."""
    entries = graph.local_entries()

    def work(entry: ApiEntry) -> list[EndpointMethod]:
        try:
            return extract_entry(entry, graph, gateway, preamble, read, stage=stage)
        except FATAL_ERRORS:
            raise
        except AgentError as exc:
            _warn(diagnostics, stage, f"skipped entry {entry.handler!r} in {entry.file}: {exc}")
            return []

    results = pmap(work, entries, parallelism)
    out: list[EndpointMethod] = []
    seen: set[tuple[str, str]] = set()
    for methods in results:
        for em in methods:
            if (em.path, em.method) not in seen:
                seen.add((em.path, em.method))
                out.append(em)
    return out


def max_dependency_depth(graph: ApiDependencyGraph) -> int:
    """Largest number of files associated with one LOCAL entry beyond its own."""
    return max((len(graph.ordered_files(e.file)) - 1 for e in graph.local_entries()), default=0)


# --- helpers -----------------------------------------------------------------------


def _warn(diagnostics: Diagnostics | None, stage: str, message: str) -> None:
    if diagnostics is not None:
        diagnostics.warn(stage, message)


def pmap(fn, items, parallelism: int):
    items = list(items)
    if parallelism <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))
