import json

import httpx
import pytest

from conftest import FakeBackend, call, output, text
from oops.errors import (
    InvalidStructuredOutput,
    MalformedBackendResponse,
    ReplayMiss,
    ToolExecutionError,
    ToolLoopExhausted,
    TransportError,
)
from oops.llm import (
    ChatRequest,
    ChatResponse,
    ChatTranscript,
    Gateway,
    OpenAIBackend,
    ToolSpec,
    Usage,
    UsageReport,
    ask_structured,
    user,
)
from oops.tools import REPO_TOOLS

SCHEMA = {"type": "object", "properties": {"x": {"type": "integer"}}, "required": ["x"]}


class EchoHost:
    def __init__(self):
        self.calls = []

    def execute(self, name, args):
        self.calls.append((name, args))
        if args.get("path") == "missing":
            raise ToolExecutionError("no such file")
        return f"contents of {args.get('path')}"


def test_fingerprint_is_stable_and_content_sensitive():
    a = ChatRequest("sys", (user("hi"),), model_id="m")
    b = ChatRequest("sys", (user("hi"),), model_id="m")
    c = ChatRequest("sys", (user("hi!"),), model_id="m")
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()
    assert len(a.fingerprint()) == 64


def test_request_rejects_nonzero_temperature():
    with pytest.raises(ValueError):
        ChatRequest("sys", (user("hi"),), temperature=0.7)


def test_tool_names_are_closed():
    with pytest.raises(ValueError):
        ToolSpec("rm_rf", "nope", {})


def test_negative_usage_rejected():
    with pytest.raises(ValueError):
        Usage(-1, 0)


def test_output_tool_added_once():
    req = ChatRequest("s", (user("u"),), tools=REPO_TOOLS, output_schema=SCHEMA)
    assert [t.name for t in req.all_tools()] == ["list_directory", "read_file", "search_files", "output"]


def test_replay_serves_in_order_then_repeats_last(tmp_path):
    path = tmp_path / "t.jsonl"
    rec = ChatTranscript.for_recording(path)
    rec.append("fp1", text("one"))
    rec.append("fp1", text("two"))
    loaded = ChatTranscript.load(path)
    assert [loaded.lookup("fp1").content for _ in range(3)] == ["one", "two", "two"]
    with pytest.raises(ReplayMiss) as exc:
        loaded.lookup("nope")
    assert exc.value.fingerprint == "nope"


def test_transcript_is_jsonl(tmp_path):
    path = tmp_path / "t.jsonl"
    rec = ChatTranscript.for_recording(path)
    rec.append("abc", text("hello", 3, 4))
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0]) == {
        "fp": "abc",
        "response": {"content": "hello", "tool_calls": [], "usage": {"input_tokens": 3, "output_tokens": 4}},
    }


def test_bad_transcript_line(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(MalformedBackendResponse):
        ChatTranscript.load(path)


def test_record_then_replay_roundtrip(tmp_path):
    path = tmp_path / "t.jsonl"
    live = Gateway(FakeBackend(text("answer")), mode="record", transcript=ChatTranscript.for_recording(path))
    req = live.request("sys", [user("q")])
    assert live.complete(req).content == "answer"
    replay = Gateway(mode="replay", transcript=ChatTranscript.load(path))
    assert replay.complete(replay.request("sys", [user("q")])).content == "answer"
    with pytest.raises(ReplayMiss):
        replay.complete(replay.request("sys", [user("other")]))


def test_gateway_mode_validation():
    with pytest.raises(ValueError):
        Gateway(None, mode="live")
    with pytest.raises(ValueError):
        Gateway(FakeBackend(), mode="record")
    with pytest.raises(ValueError):
        Gateway(mode="bogus")


def test_empty_response_is_malformed(gateway, backend):
    backend.push(ChatResponse())
    with pytest.raises(MalformedBackendResponse):
        gateway.complete(gateway.request("s", [user("u")]))


def test_usage_accounting_per_stage(gateway, backend):
    backend.push(text("a", 100, 10), text("b", 300, 30), text("c", 50, 5))
    gateway.complete(gateway.request("s", [user("1")]), stage="x")
    gateway.complete(gateway.request("s", [user("2")]), stage="x")
    gateway.complete(gateway.request("s", [user("3")]), stage="y")
    x = gateway.usage_report("x")
    assert (x.calls, x.input_tokens, x.output_tokens, x.max_in, x.max_out) == (2, 400, 40, 300, 30)
    assert x.avg_in == 200.0 and x.avg_out == 20.0
    assert gateway.usage_report().calls == 3
    assert gateway.stages() == ["x", "y"]


def test_usage_report_cost():
    r = UsageReport.from_usages([Usage(1000, 100), Usage(3000, 300)], price_in=1e-6, price_out=4e-6)
    assert r.cost == pytest.approx(4000 * 1e-6 + 400 * 4e-6, abs=1e-12)
    assert UsageReport.from_usages([]) == UsageReport()


def test_tool_loop_executes_tools_until_text(gateway, backend):
    host = EchoHost()
    backend.push(call("read_file", {"path": "a.py"}), text("done"))
    response, history = gateway.converse(gateway.request("s", [user("go")], tools=REPO_TOOLS), host)
    assert response.content == "done"
    assert host.calls == [("read_file", {"path": "a.py"})]
    assert [m.role for m in history] == ["user", "assistant", "tool", "assistant"]
    assert history[2].content == "contents of a.py"
    # the second request carried the tool result
    assert backend.requests[1].messages[-1].role == "tool"


def test_tool_failure_reported_then_escalated(gateway, backend):
    host = EchoHost()
    backend.push(call("read_file", {"path": "missing"}), text("ok"))
    _, history = gateway.converse(gateway.request("s", [user("go")], tools=REPO_TOOLS), host)
    assert history[2].content.startswith("Error: ")

    backend.push(call("read_file", {"path": "missing"}), call("read_file", {"path": "missing"}))
    with pytest.raises(ToolExecutionError):
        gateway.converse(gateway.request("s", [user("again")], tools=REPO_TOOLS), host)


def test_tool_loop_exhausted(gateway, backend):
    backend.push(*[call("read_file", {"path": f"f{i}"}) for i in range(3)])
    with pytest.raises(ToolLoopExhausted):
        gateway.converse(gateway.request("s", [user("go")], tools=REPO_TOOLS), EchoHost(), max_rounds=3)


def test_structured_output_nudges_plain_text(gateway, backend):
    backend.push(text("I think x is 3"), output({"x": 3}))
    args, _ = ask_structured(gateway, gateway.request("s", [user("go")], output_schema=SCHEMA))
    assert args == {"x": 3}
    assert backend.requests[1].messages[-1].content == "Use the output tool to report your result."


def test_structured_output_reask_once(gateway, backend):
    backend.push(output({"x": "three"}), output({"x": 3}))
    args, _ = ask_structured(gateway, gateway.request("s", [user("go")], output_schema=SCHEMA))
    assert args == {"x": 3}
    second = backend.requests[1].messages
    # the rejected output call got a tool reply before the corrective message
    assert second[-2].role == "tool" and second[-2].content.startswith("Error:")
    assert "rejected" in second[-1].content


def test_structured_output_gives_up(gateway, backend):
    backend.push(output("not json"), output({"y": 1}))
    with pytest.raises(InvalidStructuredOutput):
        ask_structured(gateway, gateway.request("s", [user("go")], output_schema=SCHEMA))


# --- OpenAI-compatible backend -------------------------------------------------------


def _completion(message, usage=None):
    return {"choices": [{"message": message}], "usage": usage or {"prompt_tokens": 7, "completion_tokens": 2}}


def test_openai_body_and_parse():
    seen = []

    def handler(request: httpx.Request):
        seen.append(request)
        return httpx.Response(200, json=_completion({
            "content": None,
            "tool_calls": [{"id": "t1", "type": "function", "function": {"name": "output", "arguments": "{\"x\": 1}"}}],
        }))

    client = httpx.Client(transport=httpx.MockTransport(handler))
    be = OpenAIBackend("http://llm.local/v1/", api_key="sk-test", client=client)
    req = ChatRequest("sys", (user("q"),), tools=REPO_TOOLS, output_schema=SCHEMA, model_id="m1")
    resp = be.send(req)
    assert resp.tool_calls[0].name == "output" and resp.usage == Usage(7, 2)
    sent = seen[0]
    assert str(sent.url) == "http://llm.local/v1/chat/completions"
    assert sent.headers["authorization"] == "Bearer sk-test"
    body = json.loads(sent.content)
    assert body["tool_choice"] == "required"
    assert body["temperature"] == 0
    assert body["messages"][0] == {"role": "system", "content": "sys"}
    assert [t["function"]["name"] for t in body["tools"]][-1] == "output"


def test_openai_retries_then_succeeds():
    codes = [429, 503, 200]
    sleeps = []

    def handler(request):
        code = codes.pop(0)
        return httpx.Response(code, json=_completion({"content": "hi"}) if code == 200 else {"error": "busy"})

    be = OpenAIBackend("http://x", api_key="k", client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=sleeps.append)
    assert be.send(ChatRequest("s", (user("q"),))).content == "hi"
    assert sleeps == [0.5, 1.0]


def test_openai_gives_up_and_client_errors_are_fatal():
    be = OpenAIBackend(
        "http://x", api_key="k", retries=2, sleep=lambda s: None,
        client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500, text="boom"))),
    )
    with pytest.raises(TransportError):
        be.send(ChatRequest("s", (user("q"),)))
    be = OpenAIBackend(
        "http://x", api_key="k", sleep=lambda s: None,
        client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(401, text="no"))),
    )
    with pytest.raises(TransportError):
        be.send(ChatRequest("s", (user("q"),)))


def test_openai_malformed_payload():
    be = OpenAIBackend("http://x", api_key="k", client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"x": 1}))))
    with pytest.raises(MalformedBackendResponse):
        be.send(ChatRequest("s", (user("q"),)))
