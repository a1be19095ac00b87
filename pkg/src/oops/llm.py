"""Chat-completion gateway with tool calling, record/replay and token meters.

Every agent in the pipeline talks to the model through :class:`Gateway`.
Requests are plain frozen dataclasses; their canonical JSON form is hashed
into a fingerprint so that a recorded transcript can stand in for the
backend and reproduce a run byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx
import jsonschema

from .errors import (
    InvalidStructuredOutput,
    MalformedBackendResponse,
    ReplayMiss,
    ToolExecutionError,
    ToolLoopExhausted,
    TransportError,
)

logger = logging.getLogger(__name__)

OUTPUT_TOOL = "output"
TOOL_NAMES = ("list_directory", "read_file", "search_files", OUTPUT_TOOL)
ROLES = ("system", "user", "assistant", "tool")
MODES = ("live", "record", "replay")

DEFAULT_MAX_ROUNDS = 16
DEFAULT_RETRIES = 3


def canonical_json(value: Any) -> str:
    """Key-sorted, whitespace-free JSON used for hashing."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameter_schema: dict

    def __post_init__(self):
        if self.name not in TOOL_NAMES:
            raise ValueError(f"unknown tool name {self.name!r}")

    def to_json(self) -> dict:
        return {"name": self.name, "description": self.description, "parameters": self.parameter_schema}


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: str  # raw JSON text as produced by the model

    def to_json(self) -> dict:
        return {"id": self.id, "name": self.name, "arguments": self.arguments}

    @classmethod
    def from_json(cls, data: dict) -> "ToolCall":
        return cls(id=str(data["id"]), name=str(data["name"]), arguments=str(data.get("arguments", "")))


@dataclass(frozen=True)
class Message:
    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_json(self) -> dict:
        data: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            data["tool_calls"] = [tc.to_json() for tc in self.tool_calls]
        if self.tool_call_id is not None:
            data["tool_call_id"] = self.tool_call_id
        return data


def user(content: str) -> Message:
    return Message("user", content)


def assistant(content: str = "", tool_calls: Iterable[ToolCall] = ()) -> Message:
    return Message("assistant", content, tuple(tool_calls))


def tool_result(call: ToolCall, content: str) -> Message:
    return Message("tool", content, tool_call_id=call.id)


@dataclass(frozen=True)
class ChatRequest:
    system_preamble: str
    messages: tuple[Message, ...]
    tools: tuple[ToolSpec, ...] = ()
    output_schema: dict | None = None
    model_id: str = ""
    temperature: float = 0.0

    def __post_init__(self):
        if self.temperature != 0:
            raise ValueError("pipeline requests must use temperature 0")
        names = [t.name for t in self.all_tools()]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate tool names in request: {names}")

    def all_tools(self) -> tuple[ToolSpec, ...]:
        """Declared tools plus the implicit ``output`` tool for structured output."""
        if self.output_schema is None or any(t.name == OUTPUT_TOOL for t in self.tools):
            return self.tools
        return self.tools + (
            ToolSpec(OUTPUT_TOOL, "Report the final result. Arguments must follow the schema.", self.output_schema),
        )

    def with_messages(self, messages: Iterable[Message]) -> "ChatRequest":
        return dataclasses.replace(self, messages=tuple(messages))

    def to_json(self) -> dict:
        return {
            "system_preamble": self.system_preamble,
            "messages": [m.to_json() for m in self.messages],
            "tools": [t.to_json() for t in self.tools],
            "output_schema": self.output_schema,
            "model_id": self.model_id,
            "temperature": self.temperature,
        }

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json()).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be nonnegative")


@dataclass(frozen=True)
class ChatResponse:
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    usage: Usage = Usage()

    def output_call(self) -> ToolCall | None:
        for call in self.tool_calls:
            if call.name == OUTPUT_TOOL:
                return call
        return None

    def to_json(self) -> dict:
        return {
            "content": self.content,
            "tool_calls": [tc.to_json() for tc in self.tool_calls],
            "usage": {"input_tokens": self.usage.input_tokens, "output_tokens": self.usage.output_tokens},
        }

    @classmethod
    def from_json(cls, data: dict) -> "ChatResponse":
        try:
            usage = data.get("usage") or {}
            return cls(
                content=data.get("content") or "",
                tool_calls=tuple(ToolCall.from_json(tc) for tc in data.get("tool_calls") or ()),
                usage=Usage(int(usage.get("input_tokens", 0)), int(usage.get("output_tokens", 0))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedBackendResponse(f"cannot decode response: {exc}") from exc


# --- transcript --------------------------------------------------------------


class ChatTranscript:
    """Append-only log of (fingerprint, response) pairs.

    On disk this is JSON lines, one ``{"fp": ..., "response": ...}`` object
    per line. Lookups for a fingerprint recorded more than once return the
    recorded responses in order and then keep returning the last one.
    """

    def __init__(self, mode: str = "replay", path: str | os.PathLike | None = None):
        if mode not in MODES:
            raise ValueError(f"unknown transcript mode {mode!r}")
        self.mode = mode
        self.path = Path(path) if path is not None else None
        self.entries: list[tuple[str, ChatResponse]] = []
        self._by_fp: dict[str, list[ChatResponse]] = {}
        self._served: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ChatTranscript":
        transcript = cls("replay", path)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    transcript._add(str(data["fp"]), ChatResponse.from_json(data["response"]))
                except (ValueError, KeyError) as exc:
                    raise MalformedBackendResponse(f"{path}:{lineno}: bad transcript line: {exc}") from exc
        return transcript

    @classmethod
    def for_recording(cls, path: str | os.PathLike | None = None) -> "ChatTranscript":
        transcript = cls("record", path)
        if transcript.path is not None:
            transcript.path.parent.mkdir(parents=True, exist_ok=True)
            transcript.path.write_text("", encoding="utf-8")
        return transcript

    def _add(self, fp: str, response: ChatResponse) -> None:
        self.entries.append((fp, response))
        self._by_fp.setdefault(fp, []).append(response)

    def append(self, fp: str, response: ChatResponse) -> None:
        with self._lock:
            self._add(fp, response)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"fp": fp, "response": response.to_json()}, ensure_ascii=False) + "\n")

    def lookup(self, fp: str) -> ChatResponse:
        with self._lock:
            recorded = self._by_fp.get(fp)
            if not recorded:
                raise ReplayMiss(fp)
            i = self._served.get(fp, 0)
            self._served[fp] = i + 1
            return recorded[min(i, len(recorded) - 1)]

    def __len__(self) -> int:
        return len(self.entries)


# --- backends --------------------------------------------------------------------


class Backend(Protocol):
    def send(self, request: ChatRequest) -> ChatResponse: ...


class OpenAIBackend:
    """OpenAI-compatible ``POST {base_url}/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        retries: int = DEFAULT_RETRIES,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get("OOPS_API_KEY")
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def body(self, request: ChatRequest) -> dict:
        messages: list[dict] = [{"role": "system", "content": request.system_preamble}]
        for m in request.messages:
            msg: dict[str, Any] = {"role": m.role, "content": m.content}
            if m.tool_calls:
                msg["tool_calls"] = [
                    {"id": tc.id, "type": "function", "function": {"name": tc.name, "arguments": tc.arguments}}
                    for tc in m.tool_calls
                ]
            if m.tool_call_id is not None:
                msg["tool_call_id"] = m.tool_call_id
            messages.append(msg)
        body: dict[str, Any] = {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        }
        tools = request.all_tools()
        if tools:
            body["tools"] = [
                {"type": "function", "function": {"name": t.name, "description": t.description, "parameters": t.parameter_schema}}
                for t in tools
            ]
            if request.output_schema is not None:
                body["tool_choice"] = "required"
        return body

    def send(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = self.body(request)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            return self.parse(resp)
        raise TransportError(f"giving up after {self.retries + 1} attempts: {last}")

    @staticmethod
    def parse(resp: httpx.Response) -> ChatResponse:
        try:
            data = resp.json()
            message = data["choices"][0]["message"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedBackendResponse(f"unexpected completion payload: {exc}") from exc
        calls = []
        for tc in message.get("tool_calls") or ():
            fn = tc.get("function") or {}
            calls.append(ToolCall(str(tc.get("id", "")), str(fn.get("name", "")), fn.get("arguments") or ""))
        usage = data.get("usage") or {}
        return ChatResponse(
            content=message.get("content") or "",
            tool_calls=tuple(calls),
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )


# --- usage accounting ------------------------------------------------------------


@dataclass(frozen=True)
class UsageReport:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    avg_in: float = 0.0
    max_in: int = 0
    avg_out: float = 0.0
    max_out: int = 0
    cost: float = 0.0

    @classmethod
    def from_usages(cls, usages: Iterable[Usage], price_in: float = 0.0, price_out: float = 0.0) -> "UsageReport":
        usages = list(usages)
        if not usages:
            return cls()
        tin = sum(u.input_tokens for u in usages)
        tout = sum(u.output_tokens for u in usages)
        n = len(usages)
        return cls(
            calls=n,
            input_tokens=tin,
            output_tokens=tout,
            avg_in=tin / n,
            max_in=max(u.input_tokens for u in usages),
            avg_out=tout / n,
            max_out=max(u.output_tokens for u in usages),
            cost=tin * price_in + tout * price_out,
        )

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


# --- gateway ------------------------------------------------------------------------------


class Gateway:
    """Front door for every model call made by the pipeline.

    ``mode`` selects the source of responses: ``live`` calls the backend,
    ``record`` calls it and appends to the transcript, ``replay`` serves
    from the transcript only and never touches the network.
    """

    def __init__(
        self,
        backend: Backend | None = None,
        *,
        mode: str = "live",
        transcript: ChatTranscript | None = None,
        model_id: str = "",
        price_in: float = 0.0,
        price_out: float = 0.0,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("live", "record") and backend is None:
            raise ValueError(f"{mode} mode needs a backend")
        if mode in ("record", "replay") and transcript is None:
            raise ValueError(f"{mode} mode needs a transcript")
        self.backend = backend
        self.mode = mode
        self.transcript = transcript
        self.model_id = model_id
        self.price_in = price_in
        self.price_out = price_out
        self._lock = threading.Lock()
        self._usages: list[tuple[str | None, Usage]] = []

    def request(self, preamble: str, messages: Iterable[Message], **kwargs) -> ChatRequest:
        kwargs.setdefault("model_id", self.model_id)
        return ChatRequest(preamble, tuple(messages), **kwargs)

    def complete(self, request: ChatRequest, *, stage: str | None = None) -> ChatResponse:
        fp = request.fingerprint()
        if self.mode == "replay":
            response = self.transcript.lookup(fp)
        else:
            response = self.backend.send(request)
            if self.mode == "record":
                self.transcript.append(fp, response)
        if not response.content and not response.tool_calls:
            raise MalformedBackendResponse("backend returned neither content nor tool calls")
        with self._lock:
            self._usages.append((stage, response.usage))
        return response

    # -- accounting

    def usage_report(self, stage: str | None = None) -> UsageReport:
        with self._lock:
            usages = [u for s, u in self._usages if stage is None or s == stage]
        return UsageReport.from_usages(usages, self.price_in, self.price_out)

    def usages(self) -> list[tuple[str | None, Usage]]:
        """(stage, usage) for every completed call, in completion order."""
        with self._lock:
            return list(self._usages)

    def stages(self) -> list[str]:
        with self._lock:
            return sorted({s for s, _ in self._usages if s is not None})

    def reset(self) -> None:
        with self._lock:
            self._usages.clear()

    # -- tool loop

    def run_tool_loop(
        self,
        request: ChatRequest,
        tool_host=None,
        max_rounds: int = DEFAULT_MAX_ROUNDS,
        *,
        stage: str | None = None,
    ) -> ChatResponse:
        return self.converse(request, tool_host, max_rounds, stage=stage)[0]

    def converse(
        self,
        request: ChatRequest,
        tool_host=None,
        max_rounds: int = DEFAULT_MAX_ROUNDS,
        *,
        stage: str | None = None,
    ) -> tuple[ChatResponse, list[Message]]:
        """Run the tool loop and also return the message history it built.

        The history ends with the final assistant turn, which lets callers
        continue the same conversation with a corrective message.
        """
        messages = list(request.messages)
        failed: set[tuple[str, str]] = set()
        for _ in range(max_rounds):
            response = self.complete(request.with_messages(messages), stage=stage)
            if response.output_call() is not None:
                messages.append(assistant(response.content, response.tool_calls))
                return response, messages
            if not response.tool_calls:
                messages.append(assistant(response.content))
                if request.output_schema is None:
                    return response, messages
                messages.append(user("Use the output tool to report your result."))
                continue
            messages.append(assistant(response.content, response.tool_calls))
            for call in response.tool_calls:
                messages.append(tool_result(call, self._execute(call, tool_host, failed)))
        raise ToolLoopExhausted(f"no final answer after {max_rounds} rounds")

    @staticmethod
    def _execute(call: ToolCall, tool_host, failed: set[tuple[str, str]]) -> str:
        try:
            if tool_host is None:
                raise ToolExecutionError(f"tool {call.name!r} is not available in this step")
            try:
                args = json.loads(call.arguments or "{}")
            except ValueError as exc:
                raise ToolExecutionError(f"arguments are not valid JSON: {exc}") from exc
            if not isinstance(args, dict):
                raise ToolExecutionError("arguments must be a JSON object")
            return tool_host.execute(call.name, args)
        except ToolExecutionError as exc:
            signature = (call.name, call.arguments)
            if signature in failed:
                raise
            failed.add(signature)
            return f"Error: {exc}"


# --- structured output helpers ---------------------------------------------------


def parse_output(response: ChatResponse, schema: dict | None = None) -> dict:
    """Return the decoded arguments of the ``output`` tool call."""
    call = response.output_call()
    if call is None:
        raise InvalidStructuredOutput("the output tool was not called")
    try:
        args = json.loads(call.arguments)
    except ValueError as exc:
        raise InvalidStructuredOutput(f"output arguments are not valid JSON: {exc}") from exc
    if schema is not None:
        try:
            jsonschema.validate(args, schema)
        except jsonschema.ValidationError as exc:
            raise InvalidStructuredOutput(f"output does not match the schema: {exc.message}") from exc
    return args


def ask_structured(
    gateway: Gateway,
    request: ChatRequest,
    tool_host=None,
    *,
    check_schema: dict | None = None,
    reasks: int = 1,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    stage: str | None = None,
) -> tuple[dict, list[Message]]:
    """Run a structured-output exchange, re-asking on invalid output.

    ``check_schema`` overrides the schema used for local validation; agents
    with item-level tolerance pass a looser schema than the one shown to
    the model.
    """
    schema = check_schema if check_schema is not None else request.output_schema
    current = request
    for attempt in range(reasks + 1):
        response, history = gateway.converse(current, tool_host, max_rounds, stage=stage)
        try:
            return parse_output(response, schema), history
        except InvalidStructuredOutput as exc:
            if attempt == reasks:
                raise
            current = request.with_messages(
                follow_up(
                    history,
                    f"Your output was rejected ({exc}). Call the output tool again with arguments that follow its schema.",
                    output_ack=f"Error: {exc}",
                )
            )
    raise AssertionError("unreachable")


def follow_up(history: list[Message], feedback: str, output_ack: str = "Received.") -> list[Message]:
    """Extend a finished conversation with a corrective user message.

    Every tool call in the last assistant turn gets a tool reply first, as
    chat-completion APIs reject dangling tool calls.
    """
    messages = list(history)
    last = messages[-1] if messages else None
    if last is not None and last.role == "assistant":
        for call in last.tool_calls:
            messages.append(tool_result(call, output_ack if call.name == OUTPUT_TOOL else "Not executed."))
    messages.append(user(feedback))
    return messages
