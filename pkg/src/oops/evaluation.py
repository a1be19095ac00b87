"""Precision/recall scoring of a generated document against a ground truth.

Four entity kinds are compared: endpoint methods, request parameters,
2xx responses and parameter constraints. Each kind is matched as a
multiset of hashable entity keys, so counts are symmetric by construction:
swapping the documents swaps fp with fn and leaves tp alone.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable

from .extraction import normalize_path, template_shape
from .llm import canonical_json
from .oas import CONSTRAINT_KEYWORDS, OPERATION_METHODS, parse

DIMENSIONS = ("endpoint_method", "request_parameter", "response", "parameter_constraint")
BODY = "body"
WHOLE_BODY = "<body>"
_TEMPLATE = re.compile(r"\{([^{}/]*)\}")
_SUCCESS = re.compile(r"^2(?:[0-9]{2}|XX)$")
_MAX_DEREF = 64


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def f1(self) -> float | None:
        return f1_score(self.precision, self.recall)

    def to_json(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def f1_score(p: float | None, r: float | None) -> float | None:
    if p is None or r is None or p + r == 0:
        return None
    return 2 * p * r / (p + r)


@dataclass
class MetricsReport:
    dimensions: dict[str, Counts] = field(default_factory=lambda: {d: Counts() for d in DIMENSIONS})

    def __getitem__(self, name: str) -> Counts:
        return self.dimensions[name]

    def to_json(self) -> dict:
        return {d: self.dimensions[d].to_json() for d in DIMENSIONS}

    def to_table(self) -> str:
        return format_table([(d, c.tp, c.fp, c.fn, c.precision, c.recall, c.f1) for d, c in self.dimensions.items()])


def _fmt(x: float | None) -> str:
    return "N/A" if x is None else f"{x:.3f}"


def format_table(rows: Iterable[tuple]) -> str:
    header = f"{'dimension':<22} {'tp':>5} {'fp':>5} {'fn':>5} {'P':>6} {'R':>6} {'F1':>6}"
    lines = [header, "-" * len(header)]
    for name, tp, fp, fn, p, r, f in rows:
        tps = "" if tp is None else str(tp)
        fps = "" if fp is None else str(fp)
        fns = "" if fn is None else str(fn)
        lines.append(f"{name:<22} {tps:>5} {fps:>5} {fns:>5} {_fmt(p):>6} {_fmt(r):>6} {_fmt(f):>6}")
    return "\n".join(lines)


# --- document views ---------------------------------------------------------------


def deref(doc: dict, node: Any) -> Any:
    """Follow ``$ref`` chains into ``components/schemas``; dangling refs give ``{}``."""
    seen = 0
    while isinstance(node, dict) and isinstance(node.get("$ref"), str):
        ref = node["$ref"]
        seen += 1
        if seen > _MAX_DEREF or not ref.startswith("#/"):
            return {}
        target: Any = doc
        for token in ref[2:].split("/"):
            token = token.replace("~1", "/").replace("~0", "~")
            target = target.get(token) if isinstance(target, dict) else None
        if target is None:
            return {}
        node = target
    return node


def _value_key(v: Any) -> tuple:
    # bool is kept apart from numbers; 1 and 1.0 compare equal
    if isinstance(v, bool):
        return ("bool", v)
    if isinstance(v, (int, float)):
        return ("num", float(v))
    return ("json", canonical_json(v))


@dataclass
class _Param:
    key: tuple
    constraints: frozenset


@dataclass
class _Operation:
    key: tuple[str, str]
    params: list[_Param]
    responses: list[tuple]


def _schema_type(schema: Any) -> str | None:
    t = schema.get("type") if isinstance(schema, dict) else None
    if t is None and isinstance(schema, dict) and isinstance(schema.get("properties"), dict):
        return "object"
    return t if isinstance(t, str) else None


def _constraints(schema: Any, required: bool) -> frozenset:
    out = set()
    if isinstance(schema, dict):
        for k in CONSTRAINT_KEYWORDS:
            if k in schema and k != "required":
                out.add((k, _value_key(schema[k])))
        # a required list on an object-typed parameter is itself a constraint value
        if isinstance(schema.get("required"), list) and schema["required"]:
            out.add(("required", _value_key(sorted(schema["required"]))))
    if required:
        out.add(("required", _value_key(True)))
    return frozenset(out)


def _pick_content(doc: dict, content: Any) -> list[tuple[str, Any]]:
    if not isinstance(content, dict):
        return []
    return [(mt, deref(doc, media.get("schema")) if isinstance(media, dict) and "schema" in media else None)
            for mt, media in content.items()]


def _operation_params(doc: dict, path: str, item: dict, op: dict) -> list[_Param]:
    names = _TEMPLATE.findall(path)
    merged: dict[tuple, dict] = {}
    for source in (item.get("parameters") or [], op.get("parameters") or []):
        for p in source:
            p = deref(doc, p)
            if isinstance(p, dict):
                merged[(p.get("name"), p.get("in"))] = p
    out: list[_Param] = []
    for (name, loc), p in merged.items():
        if loc == BODY:
            # 2.0-style body parameter; scored like a requestBody
            out.extend(_body_params(doc, deref(doc, p.get("schema", {})), p.get("required") is True))
            continue
        schema = deref(doc, p.get("schema")) if "schema" in p else {k: v for k, v in p.items() if k not in ("name", "in")}
        if loc == "path":
            ident = f"{{{names.index(name)}}}" if name in names else name
            required = True
        else:
            ident = name
            required = p.get("required") is True
        out.append(_Param((ident, loc, _schema_type(schema)), _constraints(schema, required)))
    rb = deref(doc, op.get("requestBody"))
    if isinstance(rb, dict):
        media = dict(_pick_content(doc, rb.get("content")))
        chosen = media.get("application/json", next(iter(media.values()), None))
        if isinstance(chosen, dict):
            out.extend(_body_params(doc, chosen, rb.get("required") is True))
    return out


def _body_params(doc: dict, schema: Any, required: bool) -> list[_Param]:
    schema = deref(doc, schema)
    if not isinstance(schema, dict):
        return []
    props = schema.get("properties")
    if _schema_type(schema) == "object" and isinstance(props, dict) and props:
        req = set(schema.get("required") or []) if isinstance(schema.get("required"), list) else set()
        out = []
        for name, sub in props.items():
            sub = deref(doc, sub)
            out.append(_Param((name, BODY, _schema_type(sub)), _constraints(sub, name in req)))
        return out
    return [_Param((WHOLE_BODY, BODY, _schema_type(schema)), _constraints(schema, required))]


def _operation_responses(doc: dict, op: dict) -> list[tuple]:
    out = []
    responses = op.get("responses")
    if not isinstance(responses, dict):
        return out
    for status, resp in responses.items():
        status = str(status)
        if not _SUCCESS.match(status):
            continue
        resp = deref(doc, resp)
        media = _pick_content(doc, resp.get("content") if isinstance(resp, dict) else None)
        if not media:
            out.append((status, None, None))
        for mt, schema in media:
            out.append((status, mt, _schema_type(schema) if schema is not None else None))
    return out


def operations(doc: dict) -> list[_Operation]:
    """Every operation of ``doc`` in document order, as scoring entities."""
    out = []
    for path, item in (doc.get("paths") or {}).items():
        if not isinstance(item, dict):
            continue
        shape = template_shape(normalize_path(path))
        for method, op in item.items():
            if method not in OPERATION_METHODS or not isinstance(op, dict):
                continue
            out.append(
                _Operation(
                    (shape, method.upper()),
                    _operation_params(doc, normalize_path(path), item, op),
                    _operation_responses(doc, op),
                )
            )
    return out


# --- matching ---------------------------------------------------------------------


def _multiset(gen: Iterable, truth: Iterable) -> Counts:
    g, t = Counter(gen), Counter(truth)
    tp = sum((g & t).values())
    return Counts(tp, sum(g.values()) - tp, sum(t.values()) - tp)


def _pair(gen: list, truth: list, key) -> tuple[list[tuple[Any, Any]], list, list]:
    """Pair items with equal keys in order of appearance."""
    pending: dict[Any, list] = {}
    for t in truth:
        pending.setdefault(key(t), []).append(t)
    pairs, extra = [], []
    for g in gen:
        bucket = pending.get(key(g))
        if bucket:
            pairs.append((g, bucket.pop(0)))
        else:
            extra.append(g)
    missing = [t for bucket in pending.values() for t in bucket]
    return pairs, extra, missing


def match_endpoint_methods(gen: dict, truth: dict) -> Counts:
    return _multiset((o.key for o in operations(gen)), (o.key for o in operations(truth)))


def _op_pairs(gen: dict, truth: dict):
    return _pair(operations(gen), operations(truth), key=lambda o: o.key)


def match_request_parameters(gen: dict, truth: dict) -> Counts:
    pairs, extra, missing = _op_pairs(gen, truth)
    total = Counts()
    for g, t in pairs:
        total += _multiset((p.key for p in g.params), (p.key for p in t.params))
    total += Counts(0, sum(len(o.params) for o in extra), sum(len(o.params) for o in missing))
    return total


def match_responses(gen: dict, truth: dict) -> Counts:
    pairs, extra, missing = _op_pairs(gen, truth)
    total = Counts()
    for g, t in pairs:
        total += _multiset(g.responses, t.responses)
    total += Counts(0, sum(len(o.responses) for o in extra), sum(len(o.responses) for o in missing))
    return total


def match_constraints(gen: dict, truth: dict) -> Counts:
    pairs, _, _ = _op_pairs(gen, truth)
    total = Counts()
    for g, t in pairs:
        matched, _, _ = _pair(g.params, t.params, key=lambda p: p.key)
        for gp, tp in matched:
            total += _multiset(gp.constraints, tp.constraints)
    return total


def score(gen_doc: dict, truth_doc: dict) -> MetricsReport:
    return MetricsReport(
        {
            "endpoint_method": match_endpoint_methods(gen_doc, truth_doc),
            "request_parameter": match_request_parameters(gen_doc, truth_doc),
            "response": match_responses(gen_doc, truth_doc),
            "parameter_constraint": match_constraints(gen_doc, truth_doc),
        }
    )


@dataclass
class MacroReport:
    """Simple macro average over several (generated, truth) pairs."""

    reports: list[MetricsReport]

    def average(self, dimension: str, metric: str) -> float | None:
        values = [getattr(r[dimension], metric) for r in self.reports]
        values = [v for v in values if v is not None]
        return sum(values) / len(values) if values else None

    def to_json(self) -> dict:
        return {
            "pairs": len(self.reports),
            "per_pair": [r.to_json() for r in self.reports],
            "macro": {d: {m: self.average(d, m) for m in ("precision", "recall", "f1")} for d in DIMENSIONS},
        }

    def to_table(self) -> str:
        rows = [(d, None, None, None, self.average(d, "precision"), self.average(d, "recall"), self.average(d, "f1")) for d in DIMENSIONS]
        return format_table(rows)


def score_many(pairs: Iterable[tuple[dict, dict]]) -> MacroReport:
    return MacroReport([score(g, t) for g, t in pairs])


def load_document(path: str) -> dict:
    """Read a JSON or YAML OpenAPI document."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    doc = parse(text, "json" if path.endswith(".json") else None)
    if not isinstance(doc, dict) or not isinstance(doc.get("paths", {}), dict):
        raise ValueError(f"{path} is not an OpenAPI document")
    return doc


__all__ = [
    "Counts",
    "MetricsReport",
    "MacroReport",
    "score",
    "score_many",
    "match_endpoint_methods",
    "match_request_parameters",
    "match_responses",
    "match_constraints",
    "f1_score",
    "load_document",
]
