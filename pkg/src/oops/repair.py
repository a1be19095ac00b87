"""Rule-based repair of model JSON output and inline ``$ref`` expansion."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import RefCycle, RefError, UnparseableOutput

RULES = ("backtick", "comment", "list_comma", "dict_comma", "quote")
MAX_REF_DEPTH = 32


@dataclass
class RepairReport:
    applied_rules: list[str] = field(default_factory=list)
    ref_refine_rounds: int = 0
    residual_error: str | None = None

    def to_json(self) -> dict:
        return {
            "applied_rules": list(self.applied_rules),
            "ref_refine_rounds": self.ref_refine_rounds,
            "residual_error": self.residual_error,
        }


# --- lexical scan ------------------------------------------------------------------

CODE, STRING, COMMENT = "code", "string", "comment"

# opening quote -> accepted closing quotes
_QUOTES = {
    '"': '"',
    "'": "'",
    "“": "“”",
    "”": "“”",
    "‘": "‘’",
    "’": "‘’",
}


def scan(text: str) -> list[tuple[str, str]]:
    """Split text into code, string-literal and comment segments.

    String literals may use any of the quote styles models emit; comments
    are ``//`` to end of line and ``/* ... */``. Unterminated literals and
    comments run to the end of the text.
    """
    segments: list[tuple[str, str]] = []
    i, start, n = 0, 0, len(text)

    def flush(end: int, kind: str = CODE):
        if end > start:
            segments.append((kind, text[start:end]))

    while i < n:
        ch = text[i]
        if ch in _QUOTES:
            flush(i)
            start, closers = i, _QUOTES[ch]
            i += 1
            while i < n and text[i] not in closers:
                i += 2 if text[i] == "\\" else 1
            i = min(i + 1, n)
            flush(i, STRING)
            start = i
        elif text.startswith("//", i) or text.startswith("/*", i):
            flush(i)
            start = i
            if text[i + 1] == "/":
                end = text.find("\n", i)
                i = n if end < 0 else end
            else:
                end = text.find("*/", i + 2)
                i = n if end < 0 else end + 2
            flush(i, COMMENT)
            start = i
        else:
            i += 1
    flush(n)
    return segments


def _masked(segments: list[tuple[str, str]]) -> str:
    """Code with literals and comments blanked out, positions preserved."""
    return "".join(s if k == CODE else "x" * len(s) for k, s in segments)


# --- rules -------------------------------------------------------------------------

_FENCE = re.compile(r"```+([A-Za-z][\w+.-]*[ \t]*\r?\n)?(.*?)(?:```+|\Z)", re.DOTALL)


def strip_backticks(text: str) -> str:
    stripped = text.strip()
    fence = stripped.find("```")
    quote = stripped.find('"')
    # a fence after the first double quote may be inside a JSON string
    if fence >= 0 and (quote < 0 or fence < quote):
        m = _FENCE.search(stripped, fence)
        if m:
            return m.group(2).strip()
    if stripped.startswith("`"):
        return stripped.strip("`").strip()
    return text


def strip_comments(text: str) -> str:
    return "".join(s for k, s in scan(text) if k != COMMENT)


def _drop_trailing_commas(text: str, closer: str) -> str:
    masked = _masked(scan(text))
    drop = {m.start() for m in re.finditer(r",(?=\s*" + re.escape(closer) + ")", masked)}
    return "".join(c for i, c in enumerate(text) if i not in drop) if drop else text


def strip_list_commas(text: str) -> str:
    return _drop_trailing_commas(text, "]")


def strip_dict_commas(text: str) -> str:
    return _drop_trailing_commas(text, "}")


def _requote(literal: str) -> str:
    body = literal[1:-1] if len(literal) >= 2 and literal[-1] in _QUOTES[literal[0]] else literal[1:]
    out, i = [], 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            out.append(nxt if nxt == "'" else ch + nxt)
            i += 2
            continue
        out.append('\\"' if ch == '"' else ch)
        i += 1
    return '"' + "".join(out) + '"'


def normalize_quotes(text: str) -> str:
    return "".join(_requote(s) if k == STRING and s[0] != '"' else s for k, s in scan(text))


_RULE_FUNCS: dict[str, Callable[[str], str]] = {
    "backtick": strip_backticks,
    "comment": strip_comments,
    "list_comma": strip_list_commas,
    "dict_comma": strip_dict_commas,
    "quote": normalize_quotes,
}


def apply_rules(text: str) -> tuple[str, list[str]]:
    """Run every rule in its fixed order, recording those that changed the text."""
    applied = []
    for name in RULES:
        fixed = _RULE_FUNCS[name](text)
        if fixed != text:
            applied.append(name)
            text = fixed
    return text, applied


def fix_syntax(raw: str) -> tuple[Any, RepairReport]:
    """Parse model output as JSON, repairing the common syntax slips first."""
    try:
        return json.loads(raw), RepairReport()
    except ValueError:
        pass
    text, applied = apply_rules(raw)
    report = RepairReport(applied_rules=applied)
    try:
        return json.loads(text), report
    except ValueError as exc:
        report.residual_error = f"invalid JSON: {exc}"
        raise UnparseableOutput(report.residual_error, report) from exc


# --- references --------------------------------------------------------------------


def _unescape(token: str) -> str:
    return token.replace("~1", "/").replace("~0", "~")


def resolve_pointer(root: Any, pointer: str) -> Any:
    """Follow a ``#/a/b`` JSON pointer; raises ``KeyError`` if it dangles."""
    if pointer in ("#", "#/"):
        return root
    if not pointer.startswith("#/"):
        raise KeyError(pointer)
    node = root
    for token in pointer[2:].split("/"):
        token = _unescape(token)
        if isinstance(node, dict) and token in node:
            node = node[token]
        elif isinstance(node, list) and token.isdigit() and int(token) < len(node):
            node = node[int(token)]
        else:
            raise KeyError(pointer)
    return node


def expand_refs(value: Any, root: Any = None, *, max_depth: int = MAX_REF_DEPTH) -> Any:
    """Return a copy of ``value`` with every ``$ref`` replaced by its target.

    References resolve against ``root`` (default: ``value`` itself). Keys next
    to a ``$ref`` are kept and override the target's. A dangling or external
    reference raises :class:`RefError`; expansion nested deeper than
    ``max_depth`` raises :class:`RefCycle`.
    """
    root = value if root is None else root

    def walk(node: Any, loc: str, depth: int) -> Any:
        if isinstance(node, list):
            return [walk(v, f"{loc}/{i}", depth) for i, v in enumerate(node)]
        if not isinstance(node, dict):
            return node
        if "$ref" in node and isinstance(node["$ref"], str):
            target = node["$ref"]
            if depth >= max_depth:
                raise RefCycle(loc, target, f"reference {target!r} at {loc or '/'} nests deeper than {max_depth} levels")
            if not target.startswith("#"):
                raise RefError(loc, target, f"external reference {target!r} at {loc or '/'} cannot be resolved")
            try:
                resolved = resolve_pointer(root, target)
            except KeyError:
                raise RefError(loc, target) from None
            expanded = walk(copy.deepcopy(resolved), loc, depth + 1)
            siblings = {k: walk(v, f"{loc}/{k}", depth) for k, v in node.items() if k != "$ref"}
            if siblings and isinstance(expanded, dict):
                return {**expanded, **siblings}
            return expanded
        return {k: walk(v, f"{loc}/{_escape(k)}", depth) for k, v in node.items()}

    return walk(value, "", 0)


def _escape(token: str) -> str:
    return str(token).replace("~", "~0").replace("/", "~1")
