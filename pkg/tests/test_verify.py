import pytest
from hypothesis import given, strategies as st

from helpers import reply
from samrag.backends import RequestMeta, ScriptedBackend
from samrag.corpus import Query
from samrag.errors import ContractError, ParseFailure
from samrag.verify import (Check, PromptTemplate, TemplateSet, Value, Verdict, ask_with_repair, build_prompt,
                           default_templates, extract_schema_object, is_rel, is_sup, is_use, parse_verdict)

Q = Query("q1", "What animals race in the Kentucky Derby?", ("horses",))


def test_single_slot_substitution():
    assert build_prompt(PromptTemplate("custom", "Q: {Question}"), {"Question": "x"}) == "Q: x"


def test_missing_slot_names_it():
    tpl = PromptTemplate("custom", "{Content} / {Question}")
    with pytest.raises(ContractError, match="Content"):
        build_prompt(tpl, {"Question": "q"})


def test_slot_values_are_not_re_expanded():
    tpl = PromptTemplate("custom", "{Content}|{Question}")
    assert build_prompt(tpl, {"Content": "{Question}", "Question": "q"}) == "{Question}|q"


def test_templates_declare_exactly_their_slots():
    with pytest.raises(ContractError):
        PromptTemplate("isRel", "{Content} {Question}")
    with pytest.raises(ContractError):
        PromptTemplate("custom", "{Content} {Content}")


def test_packaged_templates_load_with_required_slots():
    t = default_templates()
    assert set(t) == {"isRel", "isUse", "isSup", "qa", "image_inference", "raw_caption"}
    assert set(t["isRel"].placeholders) == {"Content", "Title", "Question"}
    assert "Mount Everest" in t["isUse"].text


def test_template_override_directory(tmp_path):
    (tmp_path / "qa.txt").write_text("short {Content} {Question}", encoding="utf-8")
    assert TemplateSet.load(tmp_path)["qa"].text == "short {Content} {Question}"


def test_strict_json_verdict():
    v = parse_verdict('{"Reasoning":"...","Response":"True"}', Check.IS_REL)
    assert v.value is Value.TRUE and v.reasoning == "..."


def test_partial_is_not_an_isrel_outcome():
    with pytest.raises(ParseFailure):
        parse_verdict('{"Reasoning":"...","Response":"Partial"}', "isRel")
    assert parse_verdict('{"Reasoning":"...","Response":"Partial"}', "isSup").value is Value.PARTIAL


def test_prose_prefix_and_lowercase_are_tolerated():
    assert parse_verdict('Sure! {"Reasoning":"r","Response":"false"}', "isUse").value is Value.FALSE


@pytest.mark.parametrize("raw,value", [
    ("{'Reasoning': 'single quotes', 'Response': 'True'}", "True"),
    ('```json\n{"Reasoning": "fenced", "Response": "Partial"}\n```', "Partial"),
    ('{"Response": "False", "Reasoning": "reversed"}', "False"),
    ('{"reasoning": "lower keys", "response": "**True**."}', "True"),
    ('{"Reasoning": "bare", "Response": true}', "True"),
    ('{"Reasoning": "She said "no" twice", "Response": "False"}', "False"),
])
def test_lenient_parse_variants(raw, value):
    assert parse_verdict(raw, "isSup").value.value == value


@given(st.text(max_size=300))
def test_parser_is_total(raw):
    for check in Check:
        try:
            v = parse_verdict(raw, check)
        except ParseFailure:
            continue
        assert isinstance(v, Verdict)


def test_extract_rejects_objects_without_schema_keys():
    with pytest.raises(ParseFailure):
        extract_schema_object('{"answer": 1}')


def test_repair_round_recovers():
    backend = ScriptedBackend({"isRel,q1,d1": "garbage", "isRel:repair,q1,d1": reply("True")})
    v = is_rel(Q, "horses on a track", "Kentucky Derby", backend, doc_id="d1")
    assert v.value is Value.TRUE and not v.defaulted
    assert [m.repair for m, _ in backend.calls] == [False, True]
    assert len(backend.calls[1][1].messages) == 3


def test_garbage_twice_defaults_to_false():
    backend = ScriptedBackend({"isRel,*,*": "garbage"})
    v = is_rel(Q, "text", "title", backend, doc_id="d1")
    assert v.value is Value.FALSE and v.defaulted and v.raw == "garbage"
    assert len(backend.calls) == 2


def test_ask_with_repair_raises_with_last_raw():
    backend = ScriptedBackend(responder=lambda m: "second" if m.repair else "first")
    with pytest.raises(ParseFailure) as err:
        ask_with_repair(backend, "p", RequestMeta("qa", "q", "d"), lambda r: parse_verdict(r, "isRel"))
    assert err.value.raw == "second"


def test_isuse_accepts_empty_context():
    backend = ScriptedBackend({"isUse,*,*": reply("True")})
    assert is_use(Q, "horses", "", backend).value is Value.TRUE


def test_contracts_on_empty_inputs():
    backend = ScriptedBackend({})
    with pytest.raises(ContractError):
        is_rel(Q, "", "t", backend)
    with pytest.raises(ContractError):
        is_use(Q, "", "ctx", backend)
    with pytest.raises(ContractError):
        is_sup(Q, "a", "", backend)


def test_prompts_carry_the_inputs():
    backend = ScriptedBackend({"isSup,*,*": reply("Partial")})
    v = is_sup(Q, "horses", "CONTEXT-TEXT", backend, step="2")
    assert v.value is Value.PARTIAL
    meta, req = backend.calls[0]
    assert meta.step == "2" and meta.doc_id == "answer"
    assert "CONTEXT-TEXT" in req.messages[0].content and Q.question in req.messages[0].content
    assert req.temperature == 0.0


def test_verdict_rejects_disallowed_value():
    with pytest.raises(ValueError):
        Verdict(Check.IS_USE, Value.PARTIAL, "", "")
