import json
import sys
from pathlib import Path

import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from oops.llm import ChatResponse, Gateway, ToolCall, Usage  # noqa: E402

FIXTURES = HERE / "fixtures"
FIXTURE_REPO = FIXTURES / "nested_router_app"
FIXTURE_TRANSCRIPT = FIXTURES / "nested_router_app.transcript.jsonl"
GOLDEN = FIXTURES / "golden" / "openapi.json"


class FakeBackend:
    """Serves queued responses in order and keeps every request it saw."""

    def __init__(self, *responses):
        self.queue = list(responses)
        self.requests = []

    def push(self, *responses):
        self.queue.extend(responses)

    def send(self, request):
        self.requests.append(request)
        if not self.queue:
            raise AssertionError("FakeBackend ran out of responses")
        item = self.queue.pop(0)
        return item(request) if callable(item) else item


def text(content, tin=10, tout=5):
    return ChatResponse(content=content, usage=Usage(tin, tout))


def call(name, args, call_id="c1", tin=10, tout=5):
    raw = args if isinstance(args, str) else json.dumps(args)
    return ChatResponse(tool_calls=(ToolCall(call_id, name, raw),), usage=Usage(tin, tout))


def output(args, call_id="out", tin=10, tout=5):
    return call("output", args, call_id, tin, tout)


@pytest.fixture
def backend():
    return FakeBackend()


@pytest.fixture
def gateway(backend):
    return Gateway(backend, model_id="test-model")


@pytest.fixture
def fixture_repo():
    return FIXTURE_REPO


def write_tree(root: Path, files: dict) -> Path:
    for rel, content in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            p.write_bytes(content)
        else:
            p.write_text(content, encoding="utf-8")
    return root


# acceptance verdict lines, repeated in the terminal summary so they show without -s
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
