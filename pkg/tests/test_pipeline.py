import shutil

import pytest

from conftest import FIXTURE_REPO, FIXTURE_TRANSCRIPT, GOLDEN
from scripted_model import ScriptedModel
from oops.errors import PipelineError, ReplayMiss
from oops.llm import ChatTranscript
from oops.oas import serialize, validate
from oops.pipeline import PHASES, RunConfig, generate_openapi, make_gateway, report_path, write_outputs


def replay_config(repo=FIXTURE_REPO, **kw):
    return RunConfig(repo_root=str(repo), mode="replay", transcript_path=str(FIXTURE_TRANSCRIPT), parallelism=1, **kw)


def test_replay_reproduces_golden():
    config = replay_config()
    doc, report = generate_openapi(FIXTURE_REPO, config, make_gateway(config))
    assert serialize(doc) == GOLDEN.read_text(encoding="utf-8")
    assert validate(doc) == [] and report.violations == []
    assert report.endpoints == 2 and report.max_dependency_depth == 2
    assert (report.files_total, report.files_kept) == (4, 3)
    assert report.technology.framework == "Express"


def test_live_run_through_scripted_model_matches_replay():
    config = RunConfig(repo_root=str(FIXTURE_REPO), parallelism=4)
    doc, report = generate_openapi(FIXTURE_REPO, config, make_gateway(config, backend=ScriptedModel()))
    assert serialize(doc) == GOLDEN.read_text(encoding="utf-8")
    assert report.usage.calls == len(ChatTranscript.load(FIXTURE_TRANSCRIPT))


def test_repairs_are_reported_per_endpoint():
    config = replay_config()
    _, report = generate_openapi(FIXTURE_REPO, config, make_gateway(config))
    assert report.repairs["GET /a/b"]["request"]["applied_rules"] == ["backtick", "list_comma"]
    assert report.repairs["GET /a/b"]["response"]["applied_rules"] == ["comment"]
    assert report.repairs["POST /a/c/f"]["request"]["ref_refine_rounds"] == 1
    assert report.repairs["POST /a/c/f"]["response"]["applied_rules"] == ["dict_comma", "quote"]


def test_phase_usage_partitions_total():
    config = replay_config()
    _, report = generate_openapi(FIXTURE_REPO, config, make_gateway(config))
    assert set(report.phase_usage) == set(PHASES)
    assert sum(u.calls for u in report.phase_usage.values()) == report.usage.calls
    assert sum(u.input_tokens for u in report.phase_usage.values()) == report.usage.input_tokens


def test_empty_repository_makes_no_calls(tmp_path):
    class Exploding:
        def send(self, request):
            raise AssertionError("no model call expected")

    config = RunConfig(repo_root=str(tmp_path))
    doc, report = generate_openapi(tmp_path, config, make_gateway(config, backend=Exploding()))
    assert doc["paths"] == {}
    assert report.usage.calls == 0
    assert any(w.stage == "inventory" for w in report.warnings)
    assert validate(doc) == []


def test_replay_miss_names_the_stage(tmp_path):
    repo = tmp_path / "repo"
    shutil.copytree(FIXTURE_REPO, repo)
    (repo / "routes" / "c.js").write_text("// changed\n", encoding="utf-8")
    config = replay_config(repo)
    with pytest.raises(PipelineError) as exc:
        generate_openapi(repo, config, make_gateway(config))
    assert exc.value.stage == "entry_detection"
    assert isinstance(exc.value.cause, ReplayMiss)


def test_outputs_written_next_to_each_other(tmp_path):
    config = replay_config(output_path=str(tmp_path / "out" / "spec.yaml"), format="yaml")
    doc, report = generate_openapi(FIXTURE_REPO, config, make_gateway(config))
    out, rp = write_outputs(doc, report, config)
    assert rp == report_path(out) == tmp_path / "out" / "spec.report.json"
    assert out.read_text().startswith("openapi: 3.0.4")


def test_config_check():
    assert RunConfig(mode="replay").check() == ["replay mode needs a transcript path"]
    problems = RunConfig(repo_root="/nonexistent", parallelism=0, format="xml").check()
    assert len(problems) == 3
