"""Per-endpoint request/response fragments and their assembly into one document."""

from __future__ import annotations

import copy
import hashlib
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .diagnostics import Diagnostics
from .errors import FATAL_ERRORS, AgentError, RefError, Unsalvageable, UnparseableOutput
from .extraction import EndpointMethod, format_dependencies
from .llm import Gateway, canonical_json, user
from .oas import DEFAULT_MEDIA_TYPE, OPERATION_METHODS, SCHEMA_REF_PREFIX, V2_SCHEMA_KEYS, OpenApiDoc, SwaggerDoc
from .repair import RepairReport, expand_refs, fix_syntax
from .tools import REPO_TOOLS

REQUEST, RESPONSE = "request", "response"
KINDS = (REQUEST, RESPONSE)
REFINE_BUDGET = 4
FALLBACK = {REQUEST: [], RESPONSE: {"200": {"description": ""}}}

_V2_LOCATIONS = ("path", "query", "header", "body", "formData")
_PARAM_KEYS = ("name", "in", "description", "required", "deprecated", "allowEmptyValue", "collectionFormat")
_RESPONSE_KEYS = ("description", "schema", "headers", "examples")
_STATUS = re.compile(r"^(?:[1-5][0-9]{2}|default)$")


@dataclass
class FragmentSpec:
    kind: str
    endpoint: EndpointMethod
    body: Any
    media_types: list[str] = field(default_factory=list)
    report: RepairReport = field(default_factory=RepairReport)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fragment kind {self.kind!r}")


# --- semantic correction -----------------------------------------------------------


def _note(diagnostics: Diagnostics | None, message: str, stage: str = "semantic_correction") -> None:
    if diagnostics is not None:
        diagnostics.warn(stage, message)


def _pick_media(content: Any) -> tuple[dict | None, list[str]]:
    """Choose the schema-bearing media type, preferring JSON."""
    if not isinstance(content, dict) or not content:
        return None, []
    names = [k for k in content if isinstance(content[k], dict)]
    if not names:
        return None, []
    chosen = DEFAULT_MEDIA_TYPE if DEFAULT_MEDIA_TYPE in names else names[0]
    return content[chosen], [chosen]


def _field_schema(param: dict) -> dict:
    schema = {k: copy.deepcopy(param[k]) for k in V2_SCHEMA_KEYS if k in param}
    if "description" in param:
        schema["description"] = param["description"]
    return schema


def _flatten_param(param: dict) -> dict:
    """Bring a non-body parameter into 2.0 shape (type fields at top level)."""
    out = {k: copy.deepcopy(param[k]) for k in _PARAM_KEYS if k in param}
    out.update({k: copy.deepcopy(v) for k, v in param.items() if k.startswith("x-")})
    schema = param.get("schema")
    if not isinstance(schema, dict) and "content" in param:
        media, _ = _pick_media(param["content"])
        schema = media.get("schema") if media else None
    for k in V2_SCHEMA_KEYS:
        if k in param:
            out[k] = copy.deepcopy(param[k])
        elif isinstance(schema, dict) and k in schema:
            out[k] = copy.deepcopy(schema[k])
    if out.get("in") == "path":
        out["required"] = True
    return out


def _body_from_request_body(rb: Any) -> tuple[dict | None, list[str]]:
    if not isinstance(rb, dict):
        return None, []
    media, types = _pick_media(rb.get("content"))
    schema = media.get("schema") if media else rb.get("schema")
    if not isinstance(schema, dict):
        return None, []
    param = {"name": "body", "in": "body"}
    if "description" in rb:
        param["description"] = rb["description"]
    if "required" in rb:
        param["required"] = bool(rb["required"])
    param["schema"] = copy.deepcopy(schema)
    return param, types


def _merge_body(fields: list[dict]) -> dict:
    """Fold several body-ish parameters into one object-typed body parameter."""
    props: dict[str, Any] = {}
    required: list[str] = []
    for p in fields:
        name = p["name"]
        props[name] = copy.deepcopy(p["schema"]) if isinstance(p.get("schema"), dict) else _field_schema(p)
        if p.get("required") is True:
            required.append(name)
    schema: dict[str, Any] = {"type": "object", "properties": props}
    body: dict[str, Any] = {"name": "body", "in": "body"}
    if required:
        body["required"] = True
        # an all-required field set is expressed by the parameter flag alone
        if len(required) < len(props):
            schema["required"] = required
    body["schema"] = schema
    return body


def _correct_request(fragment: Any, diagnostics: Diagnostics | None) -> tuple[list, list[str]]:
    media_types: list[str] = []
    extra_body = None
    if isinstance(fragment, dict):
        if "requestBody" in fragment:
            extra_body, media_types = _body_from_request_body(fragment["requestBody"])
        if isinstance(fragment.get("parameters"), list):
            fragment = fragment["parameters"]
        elif "in" in fragment and "name" in fragment:
            fragment = [fragment]
        elif extra_body is not None:
            fragment = []
        else:
            raise Unsalvageable("request fragment must be a list of Parameter objects")
    if not isinstance(fragment, list):
        raise Unsalvageable("request fragment must be a list of Parameter objects")

    out: list[Any] = []
    body_fields: list[dict] = []
    form_fields: list[dict] = []
    body_slot = None
    for i, p in enumerate(fragment):
        if not isinstance(p, dict):
            _note(diagnostics, f"dropped request parameter #{i}: not an object")
            continue
        if "requestBody" in p and "in" not in p:
            param, types = _body_from_request_body(p["requestBody"])
            if param is not None:
                p, media_types = param, media_types or types
        name, loc = p.get("name"), p.get("in")
        if not isinstance(name, str) or not name:
            _note(diagnostics, f"dropped request parameter #{i}: no name")
            continue
        if loc not in _V2_LOCATIONS:
            _note(diagnostics, f"dropped request parameter {name!r}: unsupported location {loc!r}")
            continue
        if loc == "body":
            body_slot = len(out) if body_slot is None else body_slot
            body_fields.append(p)
        elif loc == "formData":
            form_fields.append(_flatten_param(p))
        else:
            out.append(_flatten_param(p))
    if extra_body is not None:
        body_slot = len(out) if body_slot is None else body_slot
        body_fields.insert(0, extra_body)

    if body_fields:
        if form_fields:
            body_fields.extend(form_fields)
            form_fields = []
        if len(body_fields) == 1 and isinstance(body_fields[0].get("schema"), dict):
            p = body_fields[0]
            body = {k: copy.deepcopy(p[k]) for k in ("name", "in", "description", "required") if k in p}
            body["schema"] = copy.deepcopy(p["schema"])
        else:
            body = _merge_body(body_fields)
        out.insert(body_slot, body)
    out.extend(form_fields)
    return out, media_types


def _correct_response(fragment: Any, diagnostics: Diagnostics | None) -> tuple[dict, list[str]]:
    if isinstance(fragment, dict) and isinstance(fragment.get("responses"), dict):
        fragment = fragment["responses"]
    if not isinstance(fragment, dict):
        raise Unsalvageable("response fragment must be a Responses object")
    out: dict[str, Any] = {}
    media_types: list[str] = []
    for status, resp in fragment.items():
        key = str(status)
        if not _STATUS.match(key):
            _note(diagnostics, f"dropped response key {key!r}: not a status code")
            continue
        if isinstance(resp, str):
            resp = {"description": resp}
        if not isinstance(resp, dict):
            _note(diagnostics, f"dropped response {key}: not an object")
            continue
        fixed = {k: copy.deepcopy(resp[k]) for k in _RESPONSE_KEYS if k in resp}
        if not isinstance(fixed.get("description"), str):
            fixed["description"] = "" if "description" not in fixed else str(fixed["description"])
        if "content" in resp and "schema" not in fixed:
            media, types = _pick_media(resp["content"])
            if media is not None and isinstance(media.get("schema"), dict):
                fixed["schema"] = copy.deepcopy(media["schema"])
                for t in types:
                    if t not in media_types:
                        media_types.append(t)
        out[key] = {k: fixed[k] for k in _RESPONSE_KEYS if k in fixed}
    if not out:
        raise Unsalvageable("response fragment has no usable status codes")
    return out, media_types


def correct_semantics(fragment: Any, kind: str, diagnostics: Diagnostics | None = None) -> Any:
    """Coerce a parsed fragment into well-formed Swagger 2.0 for its kind."""
    return correct_fragment(fragment, kind, diagnostics)[0]


def correct_fragment(fragment: Any, kind: str, diagnostics: Diagnostics | None = None) -> tuple[Any, list[str]]:
    """Like :func:`correct_semantics`, also returning the media types found in
    any OpenAPI 3 ``content`` maps that were flattened."""
    if kind == REQUEST:
        body, media = _correct_request(fragment, diagnostics)
    elif kind == RESPONSE:
        body, media = _correct_response(fragment, diagnostics)
    else:
        raise ValueError(f"unknown fragment kind {kind!r}")
    return _fill_items(body), media


def _fill_items(node: Any) -> Any:
    """Give every array schema an ``items`` entry, which both versions require."""
    if isinstance(node, list):
        return [_fill_items(v) for v in node]
    if not isinstance(node, dict):
        return node
    out = {k: _fill_items(v) for k, v in node.items()}
    if out.get("type") == "array" and "items" not in out:
        out["items"] = {}
    return out


# --- generation --------------------------------------------------------------------

TASK_PROMPT = (
    "I'm focusing on path `{path}` and method {method}, here are the relevant files I found: "
    "{dependencies}\n\nYour task is to generate {target} You may use the tools to list directories, "
    "read files and search files when a relevant definition lives in another file."
)
TARGETS = {
    REQUEST: (
        "the request specification of this endpoint method as a Swagger 2.0 Parameter object list. "
        "Include path, query, header and body parameters with their names, locations, types and "
        "constraints (required, pattern, minimum, maximum, minLength, maxLength, minItems, maxItems, "
        "uniqueItems, ...). Describe the whole request body as a single parameter with \"in\": \"body\" "
        "and a \"schema\"; never output requestBody. Output [] if the endpoint takes no parameters."
    ),
    RESPONSE: (
        "the response specification of this endpoint method as a Swagger 2.0 Responses object, keyed "
        "by HTTP status code, where each response has a description and, when it returns a body, a "
        "schema describing that body."
    ),
}
OUTPUT_PROMPT = (
    "You need to output in Swagger 2.0 JSON format, do not include fields that are not mentioned "
    "above, do not add any additional explanations, and write every schema inline instead of "
    "referencing definitions that are not part of your output."
)
REF_REFINE_PROMPT = (
    "This is the specification you generated, its error is {error}, try to find the missing "
    "reference content and correct it: {specification}"
)
SYNTAX_REFINE_PROMPT = (
    "This is the specification you generated, its error is {error}, correct it and output the "
    "complete specification as valid JSON: {specification}"
)


def _task_prompt(endpoint: EndpointMethod, kind: str, read: Callable[[str], str]) -> str:
    deps = format_dependencies(endpoint.ordered_files, read)
    task = TASK_PROMPT.format(path=endpoint.path, method=endpoint.method, dependencies=deps, target=TARGETS[kind])
    return task + "\n\n" + OUTPUT_PROMPT


def generate_fragment(
    endpoint: EndpointMethod,
    kind: str,
    gateway: Gateway,
    tool_host,
    preamble: str,
    read: Callable[[str], str],
    *,
    budget: int = REFINE_BUDGET,
    max_rounds: int = 16,
    diagnostics: Diagnostics | None = None,
    stage: str | None = None,
) -> FragmentSpec:
    """Generate, repair and correct one fragment under a bounded refine loop.

    Each round is a fresh conversation: the task prompt plus, after a failed
    round, the error and the rejected specification. When the budget runs
    out the endpoint receives the empty fallback fragment.
    """
    stage = stage or f"{kind}_generation"
    task = _task_prompt(endpoint, kind, read)
    report = RepairReport()
    feedback: str | None = None
    for _ in range(budget):
        messages = [user(task)] + ([user(feedback)] if feedback else [])
        request = gateway.request(preamble, messages, tools=REPO_TOOLS)
        try:
            response, _ = gateway.converse(request, tool_host, max_rounds, stage=stage)
        except FATAL_ERRORS:
            raise
        except AgentError as exc:
            report.residual_error = str(exc)
            feedback = None
            continue
        raw = response.content
        try:
            value, parsed = fix_syntax(raw)
        except UnparseableOutput as exc:
            report.applied_rules = exc.report.applied_rules
            report.residual_error = str(exc)
            feedback = SYNTAX_REFINE_PROMPT.format(error=exc, specification=raw)
            continue
        report.applied_rules = parsed.applied_rules
        try:
            value = expand_refs(value)
        except RefError as exc:
            report.ref_refine_rounds += 1
            report.residual_error = str(exc)
            feedback = REF_REFINE_PROMPT.format(error=exc, specification=canonical_json(value))
            continue
        try:
            body, media_types = correct_fragment(value, kind, diagnostics)
        except Unsalvageable as exc:
            report.residual_error = str(exc)
            feedback = SYNTAX_REFINE_PROMPT.format(error=exc, specification=canonical_json(value))
            continue
        report.residual_error = None
        return FragmentSpec(kind, endpoint, body, media_types, report)
    _note(
        diagnostics,
        f"{endpoint.label}: {kind} specification unusable after {budget} rounds ({report.residual_error}); using empty fallback",
        stage,
    )
    return FragmentSpec(kind, endpoint, copy.deepcopy(FALLBACK[kind]), [], report)


# --- assembly ----------------------------------------------------------------------


def fallback_fragment(endpoint: EndpointMethod, kind: str) -> FragmentSpec:
    return FragmentSpec(kind, endpoint, copy.deepcopy(FALLBACK[kind]))


def merge_specs(
    endpoints: Sequence[EndpointMethod],
    req_fragments: Mapping[tuple[str, str], FragmentSpec],
    resp_fragments: Mapping[tuple[str, str], FragmentSpec],
    *,
    title: str = "Generated API",
    version: str = "1.0.0",
    diagnostics: Diagnostics | None = None,
) -> SwaggerDoc:
    """Place every endpoint's fragments at ``paths[path][method]``."""
    doc: dict[str, Any] = {"swagger": "2.0", "info": {"title": title, "version": version}, "paths": {}}
    for em in endpoints:
        key = (em.path, em.method)
        item = doc["paths"].setdefault(em.path, {})
        method = em.method.lower()
        if method in item:
            _note(diagnostics, f"duplicate operation {em.label}; keeping the first", "merge")
            continue
        req = req_fragments.get(key) or fallback_fragment(em, REQUEST)
        resp = resp_fragments.get(key) or fallback_fragment(em, RESPONSE)
        op: dict[str, Any] = {}
        if req.media_types and req.media_types != [DEFAULT_MEDIA_TYPE]:
            op["consumes"] = list(req.media_types)
        if resp.media_types and resp.media_types != [DEFAULT_MEDIA_TYPE]:
            op["produces"] = list(resp.media_types)
        op["parameters"] = _declare_path_params(em.path, copy.deepcopy(req.body), diagnostics)
        op["responses"] = copy.deepcopy(resp.body)
        item[method] = op
    return doc


_TEMPLATE = re.compile(r"\{([^{}/]+)\}")


def _declare_path_params(path: str, params: list, diagnostics: Diagnostics | None) -> list:
    """Make the declared path parameters agree with the path template.

    Path parameters whose names are not in the template are renamed, in
    order, to the template variables nobody declared; variables still left
    over get a string parameter.
    """
    names = _TEMPLATE.findall(path)
    declared = {p.get("name") for p in params if isinstance(p, dict) and p.get("in") == "path"}
    missing = [n for n in names if n not in declared]
    out = []
    for p in params:
        if isinstance(p, dict) and p.get("in") == "path" and p.get("name") not in names:
            if not missing:
                _note(diagnostics, f"{path}: dropped path parameter {p.get('name')!r} absent from the template", "merge")
                continue
            new = missing.pop(0)
            _note(diagnostics, f"{path}: renamed path parameter {p.get('name')!r} to {new!r}", "merge")
            p = {**p, "name": new}
        out.append(p)
    for name in missing:
        _note(diagnostics, f"{path}: declared missing path parameter {name!r}", "merge")
        out.append({"name": name, "in": "path", "required": True, "type": "string"})
    return out


def schema_key(schema: Any) -> str:
    return hashlib.md5(canonical_json(schema).encode("utf-8")).hexdigest()


def _schema_sites(doc: dict) -> Iterable[dict]:
    """Parameter objects first, then MediaType objects, in document order."""
    ops = []
    for item in (doc.get("paths") or {}).values():
        if not isinstance(item, dict):
            continue
        ops.append(item)
        ops.extend(op for m, op in item.items() if m in OPERATION_METHODS and isinstance(op, dict))
    for op in ops:
        for p in op.get("parameters") or []:
            if isinstance(p, dict):
                yield p
    for op in ops:
        rb = op.get("requestBody")
        if isinstance(rb, dict) and isinstance(rb.get("content"), dict):
            yield from (m for m in rb["content"].values() if isinstance(m, dict))
        responses = op.get("responses")
        if isinstance(responses, dict):
            for resp in responses.values():
                if isinstance(resp, dict) and isinstance(resp.get("content"), dict):
                    yield from (m for m in resp["content"].values() if isinstance(m, dict))


def rebuild_references(doc: OpenApiDoc) -> OpenApiDoc:
    """Move every parameter and media-type schema into ``components/schemas``
    under the md5 of its canonical JSON and point the site at it."""
    out = copy.deepcopy(doc)
    pool: dict[str, Any] = {}
    for site in _schema_sites(out):
        schema = site.get("schema")
        if not isinstance(schema, dict):
            continue
        if set(schema) == {"$ref"} and str(schema["$ref"]).startswith(SCHEMA_REF_PREFIX):
            continue
        key = schema_key(schema)
        pool.setdefault(key, schema)
        site["schema"] = {"$ref": SCHEMA_REF_PREFIX + key}
    components = out.setdefault("components", {})
    schemas = components.setdefault("schemas", {})
    for key, schema in pool.items():
        schemas.setdefault(key, schema)
    return out
