import pytest

from helpers import reply
from samrag.backends import ScriptedBackend
from samrag.corpus import Query
from samrag.errors import ContractError, GenerationFailure
from samrag.generate import ContextItem, Source, generate_answer, join_context, self_consistent

ADIOS = ("Adios: The Greatest Hits is the final album released by the band, collecting their singles.")
EVEREST = "Mount Everest is Earth's highest mountain above sea level, standing 8,848 meters tall."


def seq_backend(answers):
    it = iter(answers)
    return ScriptedBackend(responder=lambda m: reply(next(it)) if m.template_id == "qa" else None)


def test_answer_from_context():
    backend = ScriptedBackend({"qa,q1,answer": reply("Adios: The Greatest Hits", "The context names the album.")})
    q = Query("q1", "What is the name of the final album released by the band?", ("Adios: The Greatest Hits",))
    ans = generate_answer(q, [ContextItem("d1", ADIOS, title="Adios")], backend)
    assert ans.text == "Adios: The Greatest Hits" and ans.reasoning == "The context names the album."
    prompt = backend.calls[0][1].messages[0].content
    assert ADIOS in prompt and q.question in prompt
    assert backend.calls[0][1].temperature == 1.2


def test_everest_height():
    backend = ScriptedBackend({"qa,*,*": reply("8,848 meters")})
    q = Query("q2", "How tall is Mount Everest?", ("8,848 meters",))
    assert generate_answer(q, [ContextItem("d1", EVEREST)], backend).text == "8,848 meters"


def test_empty_context_is_a_contract_error():
    with pytest.raises(ContractError):
        generate_answer(Query("q", "?", ("a",)), [], ScriptedBackend({}))


def test_unparseable_twice_is_a_generation_failure():
    with pytest.raises(GenerationFailure):
        generate_answer(Query("q", "?", ("a",)), [ContextItem("d", "x")], ScriptedBackend({"qa,*,*": "no json"}))


def test_n1_is_plain_generation():
    q, ctx = Query("q", "?", ("a",)), [ContextItem("d", "x")]
    a = self_consistent(q, ctx, seq_backend(["Paris"]), n=1)
    b = generate_answer(q, ctx, seq_backend(["Paris"]))
    assert a == b


def test_majority_after_normalisation():
    backend = seq_backend(["Paris", "paris", "Lyon"])
    ans = self_consistent(Query("q", "?", ("a",)), [ContextItem("d", "x")], backend, n=3, step="1.1")
    assert ans.text == "Paris" and ans.votes == {"paris": 2, "lyon": 1}
    assert [m.step for m, _ in backend.calls] == ["1.1.s1", "1.1.s2", "1.1.s3"]


def test_tie_goes_to_earliest_sample():
    ans = self_consistent(Query("q", "?", ("a",)), [ContextItem("d", "x")], seq_backend(["a", "b"]), n=2)
    assert ans.text == "a"


def test_join_context_and_item_contract():
    text = join_context([ContextItem("d1", "one", title="T1"), ContextItem("d2", "two", Source.SPECIFIC_CAPTION, "T2")])
    assert text == "Title: T1\none\n\nTitle: T2\ntwo"
    with pytest.raises(ValueError):
        ContextItem("d", "")
