import json

import pytest
from hypothesis import given, settings, strategies as st

from samples import DANGLING_REF, REPAIR_ROWS
from oops.errors import RefCycle, RefError, UnparseableOutput
from oops.repair import (
    RULES,
    apply_rules,
    expand_refs,
    fix_syntax,
    normalize_quotes,
    resolve_pointer,
    scan,
    strip_backticks,
    strip_comments,
)


@pytest.mark.parametrize("rule, raw, expected", REPAIR_ROWS, ids=[r[0] for r in REPAIR_ROWS])
def test_each_table_row_is_repaired_by_its_rule(rule, raw, expected):
    value, report = fix_syntax(raw)
    assert value == expected
    assert report.applied_rules == [rule]
    assert report.residual_error is None


def test_dangling_reference_parses_but_fails_to_expand():
    value, report = fix_syntax(DANGLING_REF)
    assert report.applied_rules == []
    with pytest.raises(RefError) as exc:
        expand_refs(value)
    assert exc.value.location == "/key" and exc.value.target == "#/nil"


def test_triple_fence_with_language_tag():
    raw = 'Here you go:\n```json\n{"a": [1, 2,],}\n```\nanything else?'
    value, report = fix_syntax(raw)
    assert value == {"a": [1, 2]}
    assert report.applied_rules == ["backtick", "list_comma", "dict_comma"]


def test_rules_leave_string_contents_alone():
    raw = "{'url': 'http://x/y // not a comment', 'n': \"a,]\",}"
    value, report = fix_syntax(raw)
    assert value == {"url": "http://x/y // not a comment", "n": "a,]"}
    assert "comment" not in report.applied_rules


def test_block_comments_and_apostrophes():
    raw = "{/* note */ \"k\": 'it\\'s', // trailing\n \"q\": 'say \"hi\"'}"
    value, _ = fix_syntax(raw)
    assert value == {"k": "it's", "q": 'say "hi"'}


def test_unparseable_output_keeps_report():
    with pytest.raises(UnparseableOutput) as exc:
        fix_syntax("```json\n{not json at all\n```")
    assert exc.value.report.applied_rules == ["backtick"]
    assert exc.value.report.residual_error.startswith("invalid JSON")


def test_scan_segments_roundtrip():
    raw = "{'a': 1} // x\n/* y */ \"b\""
    assert "".join(s for _, s in scan(raw)) == raw
    kinds = [k for k, _ in scan(raw)]
    assert "comment" in kinds and "string" in kinds


def test_single_rules_directly():
    assert strip_backticks("`{}`") == "{}"
    assert strip_comments('{"a":1} // c').strip() == '{"a":1}'
    assert normalize_quotes("‘x’") == '"x"'


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats(allow_nan=False, allow_infinity=False) | st.text(),
    lambda children: st.lists(children, max_size=4) | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=12,
)


@settings(max_examples=1000)
@given(json_values, st.sampled_from([None, 2]), st.booleans())
def test_valid_json_is_returned_unchanged(value, indent, ascii_only):
    raw = json.dumps(value, indent=indent, ensure_ascii=ascii_only)
    parsed, report = fix_syntax(raw)
    assert parsed == value
    assert report.applied_rules == []
    # the rule chain on its own must not alter the meaning of valid JSON either
    repaired, _ = apply_rules(raw)
    assert json.loads(repaired) == value


# --- expand_refs -----------------------------------------------------------------------


def test_expand_nested_and_escaped_pointers():
    doc = {
        "definitions": {"a/b": {"type": "string"}, "T~": {"$ref": "#/definitions/a~1b"}},
        "use": {"$ref": "#/definitions/T~0", "description": "override"},
        "list": [{"$ref": "#/definitions/a~1b"}],
    }
    out = expand_refs(doc)
    assert out["use"] == {"type": "string", "description": "override"}
    assert out["list"] == [{"type": "string"}]
    assert doc["use"]["$ref"] == "#/definitions/T~0"


def test_expand_against_separate_root():
    assert expand_refs({"$ref": "#/x"}, {"x": 5}) == 5
    assert resolve_pointer({"a": [10, 20]}, "#/a/1") == 20


def test_external_ref_is_an_error():
    with pytest.raises(RefError):
        expand_refs({"$ref": "other.json#/x"})


def test_cycles_are_detected():
    doc = {"definitions": {"Node": {"type": "object", "properties": {"next": {"$ref": "#/definitions/Node"}}}}}
    with pytest.raises(RefCycle):
        expand_refs(doc)
    assert issubclass(RefCycle, RefError)


def test_rule_order_constant():
    assert RULES == ("backtick", "comment", "list_comma", "dict_comma", "quote")
