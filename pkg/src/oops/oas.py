"""Swagger 2.0 / OpenAPI 3.0.4 documents: conversion, validation, serialization.

Documents are plain JSON-compatible dicts, which keeps parse/serialize
round trips lossless; the ``TypedDict`` shapes below document the subset
the pipeline reads and writes.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from typing import Any, Iterator, TypedDict

import yaml

from .errors import UnsupportedConstruct

OPENAPI_VERSION = "3.0.4"
DEFAULT_MEDIA_TYPE = "application/json"
OPERATION_METHODS = ("get", "put", "post", "delete", "options", "head", "patch", "trace")
PARAMETER_LOCATIONS_V3 = ("path", "query", "header", "cookie")
PARAMETER_LOCATIONS_V2 = ("path", "query", "header", "body", "formData")

CONSTRAINT_KEYWORDS = (
    "required",
    "pattern",
    "maxProperties",
    "minProperties",
    "exclusiveMaximum",
    "exclusiveMinimum",
    "maximum",
    "minimum",
    "maxLength",
    "minLength",
    "maxItems",
    "minItems",
    "uniqueItems",
)
SCHEMA_TYPES = ("string", "number", "integer", "boolean", "array", "object")

# keys that live on a 2.0 non-body parameter but belong in a 3.0 Schema
V2_SCHEMA_KEYS = (
    "type",
    "format",
    "items",
    "default",
    "maximum",
    "exclusiveMaximum",
    "minimum",
    "exclusiveMinimum",
    "maxLength",
    "minLength",
    "pattern",
    "maxItems",
    "minItems",
    "uniqueItems",
    "enum",
    "multipleOf",
)
_V2_PARAM_DROP = ("collectionFormat", "allowEmptyValue")
_OPERATION_PASSTHROUGH = ("tags", "summary", "description", "externalDocs", "operationId", "deprecated", "security")
_FORM_MEDIA_TYPES = ("application/x-www-form-urlencoded", "multipart/form-data")

STATUS_KEY = re.compile(r"^(?:[1-5][0-9]{2}|[1-5]XX|default)$")
COMPONENT_KEY = re.compile(r"^[a-zA-Z0-9.\-_]+$")
SCHEMA_REF_PREFIX = "#/components/schemas/"


class Schema(TypedDict, total=False):
    type: str
    properties: dict[str, "Schema"]
    items: "Schema"
    required: list[str]
    enum: list
    format: str
    pattern: str
    maxProperties: int
    minProperties: int
    exclusiveMaximum: bool
    exclusiveMinimum: bool
    maximum: float
    minimum: float
    maxLength: int
    minLength: int
    maxItems: int
    minItems: int
    uniqueItems: bool


class ParameterV2(TypedDict, total=False):
    name: str
    # "in" is a keyword; it is present on every parameter
    required: bool
    type: str
    schema: Schema


class OperationV2(TypedDict, total=False):
    parameters: list[ParameterV2]
    responses: dict[str, dict]
    consumes: list[str]
    produces: list[str]


class SwaggerDoc(TypedDict, total=False):
    swagger: str
    info: dict
    paths: dict[str, dict[str, OperationV2]]
    consumes: list[str]
    produces: list[str]
    definitions: dict[str, Schema]


class OpenApiDoc(TypedDict, total=False):
    openapi: str
    info: dict
    paths: dict[str, dict[str, dict]]
    components: dict[str, dict]


# --- Swagger 2.0 -> OpenAPI 3.0.4 -------------------------------------------------


def _convert_refs(node: Any) -> Any:
    """Rewrite 2.0 schema idioms that changed in 3.0, recursively."""
    if isinstance(node, list):
        return [_convert_refs(v) for v in node]
    if not isinstance(node, dict):
        return node
    out = {}
    for k, v in node.items():
        if k == "$ref" and isinstance(v, str) and v.startswith("#/definitions/"):
            out[k] = SCHEMA_REF_PREFIX + v[len("#/definitions/"):]
        elif k == "x-nullable":
            out["nullable"] = v
        elif k in ("properties", "definitions", "patternProperties") and isinstance(v, dict):
            out[k] = {name: _convert_refs(s) for name, s in v.items()}
        else:
            out[k] = _convert_refs(v)
    if out.get("type") == "file":
        out["type"] = "string"
        out.setdefault("format", "binary")
    return out


def _param_schema(param: dict) -> dict:
    schema = {k: copy.deepcopy(param[k]) for k in V2_SCHEMA_KEYS if k in param}
    return _convert_refs(schema)


def _media_types(op: dict, doc: dict, key: str) -> list[str]:
    types = op.get(key) if op.get(key) else doc.get(key)
    return list(types) if types else [DEFAULT_MEDIA_TYPE]


def _convert_operation(op: dict, doc: dict, where: str, problems: list[str]) -> dict:
    out: dict[str, Any] = {}
    for k in _OPERATION_PASSTHROUGH:
        if k in op:
            out[k] = copy.deepcopy(op[k])
    params: list[dict] = []
    body = None
    form: list[dict] = []
    for i, p in enumerate(op.get("parameters") or []):
        if not isinstance(p, dict):
            problems.append(f"{where}/parameters/{i}: parameter is not an object")
            continue
        if "$ref" in p:
            problems.append(f"{where}/parameters/{i}: parameter $ref")
            continue
        loc = p.get("in")
        if loc == "body":
            if body is not None:
                problems.append(f"{where}/parameters/{i}: second in=body parameter")
                continue
            body = p
        elif loc == "formData":
            form.append(p)
        elif loc in PARAMETER_LOCATIONS_V3:
            q = {k: copy.deepcopy(v) for k, v in p.items() if k not in V2_SCHEMA_KEYS and k not in _V2_PARAM_DROP}
            q["schema"] = _param_schema(p) if "schema" not in p else _convert_refs(p["schema"])
            if loc == "path":
                q["required"] = True
            params.append(q)
        else:
            problems.append(f"{where}/parameters/{i}: unknown location in={loc!r}")
    if body is not None and form:
        problems.append(f"{where}: in=body and in=formData parameters together")
    if params:
        out["parameters"] = params
    if body is not None:
        rb: dict[str, Any] = {}
        if "description" in body:
            rb["description"] = body["description"]
        if "required" in body:
            rb["required"] = body["required"]
        schema = _convert_refs(body.get("schema", {}))
        rb["content"] = {mt: {"schema": copy.deepcopy(schema)} for mt in _media_types(op, doc, "consumes")}
        out["requestBody"] = rb
    elif form:
        props, required = {}, []
        for p in form:
            props[p.get("name", "")] = _param_schema(p) | ({"description": p["description"]} if "description" in p else {})
            if p.get("required"):
                required.append(p.get("name", ""))
        schema: dict[str, Any] = {"type": "object", "properties": props}
        if required:
            schema["required"] = required
        declared = [mt for mt in _media_types(op, doc, "consumes") if mt in _FORM_MEDIA_TYPES]
        if not declared:
            has_file = any(p.get("type") == "file" for p in form)
            declared = ["multipart/form-data" if has_file else "application/x-www-form-urlencoded"]
        rb = {"content": {mt: {"schema": copy.deepcopy(schema)} for mt in declared}}
        if required:
            rb["required"] = True
        out["requestBody"] = rb
    responses = {}
    for status, resp in (op.get("responses") or {}).items():
        if not isinstance(resp, dict):
            problems.append(f"{where}/responses/{status}: response is not an object")
            continue
        if "$ref" in resp:
            problems.append(f"{where}/responses/{status}: response $ref")
            continue
        r: dict[str, Any] = {"description": resp.get("description", "")}
        if "headers" in resp and isinstance(resp["headers"], dict):
            headers = {}
            for name, h in resp["headers"].items():
                h = h if isinstance(h, dict) else {}
                hv: dict[str, Any] = {}
                if "description" in h:
                    hv["description"] = h["description"]
                hv["schema"] = _param_schema(h)
                headers[name] = hv
            r["headers"] = headers
        if "schema" in resp:
            schema = _convert_refs(resp["schema"])
            examples = resp.get("examples") if isinstance(resp.get("examples"), dict) else {}
            content = {}
            for mt in _media_types(op, doc, "produces"):
                content[mt] = {"schema": copy.deepcopy(schema)}
                if mt in examples:
                    content[mt]["example"] = copy.deepcopy(examples[mt])
            r["content"] = content
        responses[str(status)] = r
    out["responses"] = responses
    return out


def upgrade_to_304(doc: SwaggerDoc) -> OpenApiDoc:
    """Convert the Swagger 2.0 subset the pipeline emits into OpenAPI 3.0.4."""
    problems: list[str] = []
    out: dict[str, Any] = {"openapi": OPENAPI_VERSION, "info": copy.deepcopy(doc.get("info", {}))}
    for k in ("tags", "externalDocs"):
        if k in doc:
            out[k] = copy.deepcopy(doc[k])
    if "host" in doc or "basePath" in doc:
        schemes = doc.get("schemes") or ["https"]
        host = doc.get("host", "")
        base = doc.get("basePath", "")
        out["servers"] = [{"url": f"{s}://{host}{base}" if host else base or "/"} for s in schemes]
    paths: dict[str, Any] = {}
    for path, item in (doc.get("paths") or {}).items():
        if not isinstance(item, dict):
            problems.append(f"/paths/{path}: path item is not an object")
            continue
        new_item: dict[str, Any] = {}
        for key, op in item.items():
            where = f"/paths/{_escape(path)}/{key}"
            if key in OPERATION_METHODS:
                new_item[key] = _convert_operation(op or {}, doc, where, problems)
            elif key == "parameters" and not op:
                continue
            elif key.startswith("x-"):
                new_item[key] = copy.deepcopy(op)
            else:
                problems.append(f"{where}: path item field {key!r}")
        paths[path] = new_item
    out["paths"] = paths
    if doc.get("definitions"):
        out["components"] = {"schemas": {k: _convert_refs(v) for k, v in doc["definitions"].items()}}
    if problems:
        raise UnsupportedConstruct(problems)
    return out


# --- validation -------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    location: str  # JSON pointer
    message: str

    def __str__(self) -> str:
        return f"{self.location or '/'}: {self.message}"


def _escape(token: str) -> str:
    return str(token).replace("~", "~0").replace("/", "~1")


def _validate_schema(schema: Any, loc: str, schemas: dict, out: list[Violation], depth: int = 0) -> None:
    if depth > 64:
        out.append(Violation(loc, "schema nesting too deep"))
        return
    if not isinstance(schema, dict):
        out.append(Violation(loc, "schema must be an object"))
        return
    if "$ref" in schema:
        ref = schema["$ref"]
        if len(schema) > 1:
            out.append(Violation(loc, "$ref must not have sibling keys"))
        if not isinstance(ref, str) or not ref.startswith(SCHEMA_REF_PREFIX):
            out.append(Violation(loc, f"unsupported $ref {ref!r}"))
        elif ref[len(SCHEMA_REF_PREFIX):] not in schemas:
            out.append(Violation(loc, f"dangling $ref {ref!r}"))
        return
    t = schema.get("type")
    if t is not None and t not in SCHEMA_TYPES:
        out.append(Violation(loc + "/type", f"invalid type {t!r}"))
    if t == "array" and "items" not in schema:
        out.append(Violation(loc, "array schema without items"))
    if "items" in schema:
        _validate_schema(schema["items"], loc + "/items", schemas, out, depth + 1)
    props = schema.get("properties")
    if props is not None:
        if not isinstance(props, dict):
            out.append(Violation(loc + "/properties", "properties must be an object"))
        else:
            for name, sub in props.items():
                _validate_schema(sub, f"{loc}/properties/{_escape(name)}", schemas, out, depth + 1)
    req = schema.get("required")
    if req is not None and (not isinstance(req, list) or not all(isinstance(r, str) for r in req)):
        out.append(Violation(loc + "/required", "required must be a list of property names"))
    for key in ("allOf", "anyOf", "oneOf"):
        if key in schema:
            subs = schema[key]
            if not isinstance(subs, list):
                out.append(Violation(f"{loc}/{key}", f"{key} must be a list"))
                continue
            for i, sub in enumerate(subs):
                _validate_schema(sub, f"{loc}/{key}/{i}", schemas, out, depth + 1)
    for key in ("not", "additionalProperties"):
        if isinstance(schema.get(key), dict):
            _validate_schema(schema[key], f"{loc}/{key}", schemas, out, depth + 1)
    for key in ("exclusiveMaximum", "exclusiveMinimum", "uniqueItems", "nullable"):
        if key in schema and not isinstance(schema[key], bool):
            out.append(Violation(f"{loc}/{key}", f"{key} must be a boolean in OpenAPI 3.0"))


def _validate_content(content: Any, loc: str, schemas: dict, out: list[Violation]) -> None:
    if not isinstance(content, dict):
        out.append(Violation(loc, "content must be an object"))
        return
    for mt, media in content.items():
        mloc = f"{loc}/{_escape(mt)}"
        if not isinstance(media, dict):
            out.append(Violation(mloc, "media type object must be an object"))
        elif "schema" in media:
            _validate_schema(media["schema"], mloc + "/schema", schemas, out)


def _validate_parameters(params: Any, loc: str, schemas: dict, out: list[Violation]) -> list[dict]:
    if not isinstance(params, list):
        out.append(Violation(loc, "parameters must be a list"))
        return []
    seen = set()
    valid = []
    for i, p in enumerate(params):
        ploc = f"{loc}/{i}"
        if not isinstance(p, dict):
            out.append(Violation(ploc, "parameter must be an object"))
            continue
        name, where = p.get("name"), p.get("in")
        if not isinstance(name, str) or not name:
            out.append(Violation(ploc, "parameter without a name"))
        if where not in PARAMETER_LOCATIONS_V3:
            out.append(Violation(ploc + "/in", f"parameter location {where!r} is not allowed in OpenAPI 3.0"))
            continue
        if (name, where) in seen:
            out.append(Violation(ploc, f"duplicate parameter {name!r} in {where}"))
        seen.add((name, where))
        if where == "path" and p.get("required") is not True:
            out.append(Violation(ploc + "/required", "path parameters must be required"))
        if ("schema" in p) == ("content" in p):
            out.append(Violation(ploc, "parameter needs exactly one of schema or content"))
        if "schema" in p:
            _validate_schema(p["schema"], ploc + "/schema", schemas, out)
        if "content" in p:
            _validate_content(p["content"], ploc + "/content", schemas, out)
        for key in V2_SCHEMA_KEYS:
            if key in p:
                out.append(Violation(f"{ploc}/{key}", f"{key!r} belongs inside the parameter schema"))
        valid.append(p)
    return valid


_TEMPLATE_PARAM = re.compile(r"\{([^{}/]+)\}")


def validate(doc: OpenApiDoc) -> list[Violation]:
    """Check the OpenAPI 3.0 rules that apply to the subset we emit."""
    out: list[Violation] = []
    if not isinstance(doc, dict):
        return [Violation("", "document must be an object")]
    version = doc.get("openapi")
    if not isinstance(version, str) or not re.match(r"^3\.0\.\d+$", version):
        out.append(Violation("/openapi", f"expected an OpenAPI 3.0.x version string, got {version!r}"))
    if "swagger" in doc:
        out.append(Violation("/swagger", "Swagger 2.0 field in an OpenAPI 3.0 document"))
    info = doc.get("info")
    if not isinstance(info, dict) or not isinstance(info.get("title"), str) or not isinstance(info.get("version"), str):
        out.append(Violation("/info", "info needs string title and version"))
    components = doc.get("components", {})
    schemas = components.get("schemas", {}) if isinstance(components, dict) else {}
    if not isinstance(schemas, dict):
        out.append(Violation("/components/schemas", "schemas must be an object"))
        schemas = {}
    for key, schema in schemas.items():
        if not COMPONENT_KEY.match(key):
            out.append(Violation(f"/components/schemas/{_escape(key)}", "invalid component key"))
        _validate_schema(schema, f"/components/schemas/{_escape(key)}", schemas, out)
    paths = doc.get("paths")
    if not isinstance(paths, dict):
        out.append(Violation("/paths", "paths must be an object"))
        return out
    for path, item in paths.items():
        iloc = f"/paths/{_escape(path)}"
        if not path.startswith("/"):
            out.append(Violation(iloc, "path must start with '/'"))
        if not isinstance(item, dict):
            out.append(Violation(iloc, "path item must be an object"))
            continue
        shared = _validate_parameters(item.get("parameters", []), iloc + "/parameters", schemas, out)
        for method, op in item.items():
            if method in ("parameters", "summary", "description", "servers") or method.startswith("x-"):
                continue
            oloc = f"{iloc}/{method}"
            if method not in OPERATION_METHODS:
                out.append(Violation(oloc, f"unknown path item field {method!r}"))
                continue
            if not isinstance(op, dict):
                out.append(Violation(oloc, "operation must be an object"))
                continue
            own = _validate_parameters(op.get("parameters", []), oloc + "/parameters", schemas, out)
            declared = {p.get("name") for p in shared + own if p.get("in") == "path"}
            for name in _TEMPLATE_PARAM.findall(path):
                if name not in declared:
                    out.append(Violation(oloc, f"path parameter {name!r} is not declared"))
            for key in ("consumes", "produces"):
                if key in op:
                    out.append(Violation(f"{oloc}/{key}", "Swagger 2.0 field in an OpenAPI 3.0 operation"))
            if "requestBody" in op:
                rb = op["requestBody"]
                if not isinstance(rb, dict) or "content" not in rb:
                    out.append(Violation(oloc + "/requestBody", "requestBody needs content"))
                else:
                    _validate_content(rb["content"], oloc + "/requestBody/content", schemas, out)
            responses = op.get("responses")
            if not isinstance(responses, dict) or not responses:
                out.append(Violation(oloc + "/responses", "operation needs at least one response"))
                continue
            for status, resp in responses.items():
                rloc = f"{oloc}/responses/{_escape(status)}"
                if not STATUS_KEY.match(str(status)):
                    out.append(Violation(rloc, f"invalid status code key {status!r}"))
                if not isinstance(resp, dict):
                    out.append(Violation(rloc, "response must be an object"))
                    continue
                if not isinstance(resp.get("description"), str):
                    out.append(Violation(rloc, "response needs a description"))
                if "schema" in resp:
                    out.append(Violation(rloc + "/schema", "Swagger 2.0 response schema; use content"))
                if "content" in resp:
                    _validate_content(resp["content"], rloc + "/content", schemas, out)
                for hname, header in (resp.get("headers") or {}).items():
                    if isinstance(header, dict) and "schema" in header:
                        _validate_schema(header["schema"], f"{rloc}/headers/{_escape(hname)}/schema", schemas, out)
    return out


# --- serialization ----------------------------------------------------------------


def _ordered(doc: dict) -> dict:
    out = dict(doc)
    comps = out.get("components")
    if isinstance(comps, dict) and isinstance(comps.get("schemas"), dict):
        out["components"] = dict(comps)
        out["components"]["schemas"] = {k: comps["schemas"][k] for k in sorted(comps["schemas"])}
    return out


def serialize(doc: dict, format: str = "json") -> str:
    """Deterministic text form: insertion order everywhere except
    ``components.schemas``, which is sorted by key."""
    doc = _ordered(doc)
    if format == "json":
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if format == "yaml":
        return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True, default_flow_style=False)
    raise ValueError(f"unknown format {format!r}")


def parse(text: str, format: str | None = None) -> dict:
    if format is None:
        format = "json" if text.lstrip().startswith("{") else "yaml"
    if format == "json":
        return json.loads(text)
    if format == "yaml":
        return yaml.safe_load(text)
    raise ValueError(f"unknown format {format!r}")


def iter_operations(doc: dict) -> Iterator[tuple[str, str, dict]]:
    for path, item in (doc.get("paths") or {}).items():
        if not isinstance(item, dict):
            continue
        for method, op in item.items():
            if method in OPERATION_METHODS and isinstance(op, dict):
                yield path, method, op
