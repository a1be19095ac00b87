"""Deterministic stand-in for a chat model, tailored to the nested router fixture.

It answers each agent prompt the way a careful model would, plus a few
deliberate slips (a non-canonical path, a code fence, trailing commas, a
dangling reference, 3.0-style nesting) so that recording a run through
it exercises every repair path. The frozen transcript in fixtures/ was
recorded with this class; see fixtures/regenerate.py.
"""

from __future__ import annotations

import json
import re

from oops.llm import ChatRequest, ChatResponse, ToolCall, Usage, canonical_json
from oops.tech import ANALYZER_PREAMBLE

ENTRIES = {
    "app.js": [{"path": "/a", "handler": "aRouter", "tag": "REF"}],
    "routes/a.js": [
        {"path": "/b", "handler": "getB", "tag": "LOCAL"},
        {"path": "/c", "handler": "cRouter", "tag": "REF"},
    ],
    "routes/c.js": [{"path": "/f", "handler": "createF", "tag": "LOCAL"}],
}

NO_METHODS = {m: False for m in ("GET", "POST", "PUT", "DELETE", "PATCH", "HEAD", "OPTIONS", "ALL")}
EXTRACTIONS = {
    "getB": ("/a/b", "GET"),
    "createF": ("/a/c/f", "POST"),
}

GET_B_REQUEST = """```json
[
  {"name": "limit", "in": "query", "required": false, "type": "integer", "minimum": 0},
]
```"""

CREATE_F_REQUEST_DANGLING = """[
  {"name": "title", "in": "body", "required": true, "type": "string", "minLength": 1},
  {"name": "tags", "in": "body", "required": false, "type": "array", "items": {"$ref": "#/definitions/Tag"}}
]"""

CREATE_F_REQUEST_FIXED = """[
  {"name": "title", "in": "body", "required": true, "type": "string", "minLength": 1},
  {"name": "tags", "in": "body", "required": false, "type": "array", "items": {"type": "string"}}
]"""

GET_B_RESPONSE = """{
  "200": {
    "description": "List of items",
    "schema": {
      "type": "array",
      "items": {
        "type": "object",
        "properties": {"id": {"type": "integer"}, "name": {"type": "string"}}
      }
    }
  }
} // the slice honours the limit query parameter"""

CREATE_F_RESPONSE = """{
  "201": {
    "description": "Created",
    "content": {
      "application/json": {
        "schema": {
          "type": "object",
          "properties": {
            "id": {"type": "integer"},
            "title": {"type": "string"},
            "tags": {"type": "array", "items": {"type": "string"}}
          }
        }
      }
    }
  },
  '400': {"description": "Bad request", "schema": {"type": "object", "properties": {"error": {"type": "string"}}}},
}"""


def _usage(request: ChatRequest, text: str) -> Usage:
    return Usage(len(canonical_json(request.to_json())) // 4, max(1, len(text) // 4))


class ScriptedModel:
    """A backend (``send(request) -> ChatResponse``) with canned behaviour."""

    def __init__(self):
        self.calls = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        users = [m.content for m in request.messages if m.role == "user"]
        prompt = users[0]
        used_tools = any(m.role == "tool" for m in request.messages)
        call_id = f"call_{len(request.messages)}"

        if request.system_preamble == ANALYZER_PREAMBLE:
            if not used_tools:
                return self._tool(request, call_id, "list_directory", {"path": "."})
            return self._output(request, call_id, {
                "reasoning": "package.json depends on express and app.js creates an express app.",
                "language": "JavaScript",
                "framework": "Express",
                "evidence": [{"path": "package.json", "note": "express dependency"}, {"path": "app.js", "note": "express()"}],
            })

        m = re.search(r"whether file (\S+) might contain", prompt)
        if m:
            path = m.group(1)
            keep = path.endswith(".js")
            why = "JavaScript source may register routes" if keep else "package manifest, not route code"
            return self._output(request, call_id, {"result": keep, "reasoning": why})

        m = re.search(r"extract API entries from file (\S+), its content", prompt)
        if m:
            entries = [] if "These are the API entries you've found" in prompt else ENTRIES.get(m.group(1), [])
            return self._output(request, call_id, {"thoughts": "Looked for use/get/post registrations.", "entries": entries})

        m = re.search(r"I found that `([^`]+)` is imported", prompt)
        if m:
            handler = m.group(1)
            if handler == "aRouter":
                refined = len(users) > 1
                files = ["routes/a.js"] if refined else ["./routes/a.js"]
                return self._output(request, call_id, {"reasoning": "require('./routes/a')", "files": files})
            if not used_tools:
                return self._tool(request, call_id, "search_files", {"pattern": "module.exports = router", "path": "routes"})
            return self._output(request, call_id, {"reasoning": "require('./c') in routes/a.js", "files": ["routes/c.js"]})

        m = re.search(r"I found that `([^`]+)` is bound", prompt)
        if m:
            path, method = EXTRACTIONS.get(m.group(1), ("/a", None))
            flags = dict(NO_METHODS)
            if method:
                flags[method] = True
            return self._output(request, call_id, {"thoughts": "Joined the mounted prefixes.", "path": path, "methods": flags})

        m = re.search(r"I'm focusing on path `([^`]+)` and method (\w+)", prompt)
        if m:
            path, method = m.group(1), m.group(2)
            if "request specification" in prompt:
                if path == "/a/b":
                    return self._text(request, GET_B_REQUEST)
                if len(users) > 1 and "missing reference" in users[1]:
                    return self._text(request, CREATE_F_REQUEST_FIXED)
                if not used_tools:
                    return self._tool(request, call_id, "read_file", {"path": "routes/c.js"})
                return self._text(request, CREATE_F_REQUEST_DANGLING)
            return self._text(request, GET_B_RESPONSE if path == "/a/b" else CREATE_F_RESPONSE)

        raise AssertionError(f"unscripted prompt: {prompt[:120]!r}")

    @staticmethod
    def _text(request: ChatRequest, content: str) -> ChatResponse:
        return ChatResponse(content=content, usage=_usage(request, content))

    @staticmethod
    def _tool(request: ChatRequest, call_id: str, name: str, args: dict) -> ChatResponse:
        raw = json.dumps(args)
        return ChatResponse(tool_calls=(ToolCall(call_id, name, raw),), usage=_usage(request, raw))

    @classmethod
    def _output(cls, request: ChatRequest, call_id: str, args: dict) -> ChatResponse:
        return cls._tool(request, call_id, "output", args)
