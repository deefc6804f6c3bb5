"""Answer drafting from accumulated context, with optional self-consistency."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .backends import Backend, RequestMeta
from .corpus import Query
from .errors import ContractError, GenerationFailure, ParseFailure
from .evalx import normalize_answer
from .verify import ask_with_repair, build_prompt, default_templates, extract_schema_object


class Source(str, Enum):
    TEXT_BODY = "text_body"
    SPECIFIC_CAPTION = "specific_caption"


@dataclass(frozen=True)
class ContextItem:
    doc_id: str
    text: str
    source: Source = Source.TEXT_BODY
    title: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"context item {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class Answer:
    text: str
    reasoning: str
    attempt: int = 1
    votes: dict[str, int] | None = None


def join_context(context: Sequence[ContextItem]) -> str:
    return "\n\n".join(f"Title: {c.title}\n{c.text}" for c in context)


def _parse_answer(raw: str) -> tuple[str, str]:
    reasoning, response = extract_schema_object(raw)
    response = response.strip()
    if not response:
        raise ParseFailure("empty Response", raw)
    return reasoning, response


def generate_answer(query: Query, context: Sequence[ContextItem], llm: Backend, attempt: int = 1, *,
                    step: str | None = None, templates=None, temperature: float = 1.2) -> Answer:
    if not context:
        raise ContractError("generate_answer needs non-empty context")
    if attempt < 1:
        raise ContractError("attempt numbers start at 1")
    prompt = build_prompt((templates or default_templates())["qa"],
                          {"Content": join_context(context), "Question": query.question})
    meta = RequestMeta("qa", query.qid, "answer", step)
    try:
        (reasoning, text), _ = ask_with_repair(llm, prompt, meta, _parse_answer, temperature=temperature)
    except ParseFailure as exc:
        raise GenerationFailure(f"could not parse an answer for {query.qid!r}: {exc}") from None
    return Answer(text, reasoning, attempt)


def self_consistent(query: Query, context: Sequence[ContextItem], llm: Backend, n: int = 5, attempt: int = 1, *,
                    step: str | None = None, templates=None, temperature: float = 1.2) -> Answer:
    """Majority vote over ``n`` samples grouped by normalised text.

    The largest group wins; among equally large groups the one sampled first
    wins, and the returned answer is that group's first sample.
    """
    if n < 1:
        raise ContractError("self-consistency needs n >= 1")
    if n == 1:
        return generate_answer(query, context, llm, attempt, step=step, templates=templates, temperature=temperature)
    samples: list[Answer] = []
    for i in range(1, n + 1):
        sub = f"{step}.s{i}" if step else f"s{i}"
        try:
            samples.append(generate_answer(query, context, llm, attempt, step=sub, templates=templates,
                                           temperature=temperature))
        except GenerationFailure:
            continue
    if not samples:
        raise GenerationFailure(f"all {n} self-consistency samples failed for {query.qid!r}")
    votes: dict[str, int] = {}
    first: dict[str, Answer] = {}
    for s in samples:
        key = normalize_answer(s.text)
        votes[key] = votes.get(key, 0) + 1
        first.setdefault(key, s)
    best = max(votes, key=lambda k: votes[k])  # max keeps the first maximal key in insertion order
    win = first[best]
    return Answer(win.text, win.reasoning, attempt, votes)
