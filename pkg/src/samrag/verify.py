"""Relevance, usefulness and support checks.

Every check renders a prompt template, asks a backend, and parses a
``{"Reasoning": ..., "Response": ...}`` object out of the reply. Replies are
often not clean JSON (Python-dict quoting, prose around the object, unescaped
quotes inside the reasoning), so parsing falls through three layers: JSON,
Python literal, then a tolerant key/value scan.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

from .backends import Backend, ChatRequest, Message, RequestMeta
from .corpus import Query
from .errors import ContractError, ParseFailure


class Check(str, Enum):
    IS_REL = "isRel"
    IS_USE = "isUse"
    IS_SUP = "isSup"


class Value(str, Enum):
    TRUE = "True"
    FALSE = "False"
    PARTIAL = "Partial"


ALLOWED = {
    Check.IS_REL: (Value.TRUE, Value.FALSE),
    Check.IS_USE: (Value.TRUE, Value.FALSE),
    Check.IS_SUP: (Value.TRUE, Value.PARTIAL, Value.FALSE),
}


@dataclass(frozen=True)
class Verdict:
    check: Check
    value: Value
    reasoning: str
    raw: str
    defaulted: bool = False

    def __post_init__(self):
        if self.value not in ALLOWED[self.check]:
            raise ValueError(f"{self.value.value} is not a valid outcome for {self.check.value}")


# ---------------------------------------------------------------- templates

PLACEHOLDERS = ("Content", "Title", "Question", "Answer")
_SLOT = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")

REQUIRED_SLOTS = {
    "isRel": ("Content", "Title", "Question"),
    "isUse": ("Content", "Question", "Answer"),
    "isSup": ("Content", "Question", "Answer"),
    "qa": ("Content", "Question"),
    "image_inference": ("Title", "Question"),
    "raw_caption": ("Title",),
}


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str

    def __post_init__(self):
        found = _SLOT.findall(self.text)
        dupes = {p for p in found if found.count(p) > 1}
        if dupes:
            raise ContractError(f"template {self.template_id!r} repeats placeholder(s) {sorted(dupes)}")
        need = REQUIRED_SLOTS.get(self.template_id)
        if need is not None and set(found) != set(need):
            raise ContractError(f"template {self.template_id!r} has placeholders {found}, expected {list(need)}")

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(_SLOT.findall(self.text))


def build_prompt(template: PromptTemplate, slots: Mapping[str, str]) -> str:
    """Substitute placeholders in one pass; slot values are inserted literally."""
    for name in template.placeholders:
        if name not in slots:
            raise ContractError(f"missing slot {name!r} for template {template.template_id!r}")
    return _SLOT.sub(lambda m: str(slots[m.group(1)]), template.text)


class TemplateSet(dict):
    """``template_id -> PromptTemplate``; package defaults with optional overrides."""

    @classmethod
    def load(cls, override_dir=None) -> "TemplateSet":
        out = cls()
        pkg = resources.files("samrag") / "templates"
        for tid in REQUIRED_SLOTS:
            out[tid] = PromptTemplate(tid, (pkg / f"{tid}.txt").read_text(encoding="utf-8"))
        if override_dir is not None:
            for path in sorted(Path(override_dir).glob("*.txt")):
                out[path.stem] = PromptTemplate(path.stem, path.read_text(encoding="utf-8"))
        return out


_DEFAULT_TEMPLATES: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = TemplateSet.load()
    return _DEFAULT_TEMPLATES


# ---------------------------------------------------------------- parsing

_LOOSE = re.compile(
    r"""(["'])Reasoning\1\s*:\s*(["'])(?P<reasoning>.*?)\2\s*,\s*(["'])Response\4\s*:\s*"""
    r"""(?:(["'])(?P<quoted>[^"'\n]*)\5|(?P<bare>true|false))""",
    re.S | re.I,
)
_LOOSE_REVERSED = re.compile(
    r"""(["'])Response\1\s*:\s*(?:(["'])(?P<quoted>[^"'\n]*)\2|(?P<bare>true|false))\s*,\s*"""
    r"""(["'])Reasoning\5\s*:\s*(["'])(?P<reasoning>.*?)\6\s*[,}]""",
    re.S | re.I,
)
_MAX_LITERAL_TRIES = 64
_DECODER = json.JSONDecoder()


def _scalar(v) -> str:
    if isinstance(v, bool):
        return "True" if v else "False"
    return v if isinstance(v, str) else json.dumps(v)


def _pair(obj) -> tuple[str, str] | None:
    if not isinstance(obj, dict):
        return None
    keys = {k.lower(): v for k, v in obj.items() if isinstance(k, str)}
    if "reasoning" in keys and "response" in keys:
        return _scalar(keys["reasoning"]), _scalar(keys["response"])
    return None


def extract_schema_object(raw: str) -> tuple[str, str]:
    """Return ``(reasoning, response)`` from the first usable object in ``raw``."""
    if not isinstance(raw, str):
        raise ParseFailure("backend output is not a string", repr(raw))
    for start in (i for i, c in enumerate(raw) if c == "{"):
        try:
            found = _pair(_DECODER.raw_decode(raw, start)[0])
        except (ValueError, RecursionError):
            found = None
        if found:
            return found
        tries = 0
        end = raw.find("}", start)
        while end != -1 and tries < _MAX_LITERAL_TRIES:
            tries += 1
            try:
                found = _pair(ast.literal_eval(raw[start:end + 1]))
            except Exception:  # literal_eval raises a zoo of exception types
                found = None
            if found:
                return found
            end = raw.find("}", end + 1)
    for pattern in (_LOOSE, _LOOSE_REVERSED):
        m = pattern.search(raw)
        if m:
            response = m.group("quoted") if m.group("quoted") is not None else m.group("bare")
            return m.group("reasoning"), response
    raise ParseFailure("no object with Reasoning and Response keys", raw)


_BY_TOKEN = {c: {v.value.lower(): v for v in vs} for c, vs in ALLOWED.items()}


def _match_value(response: str, check: Check) -> Value | None:
    token = response.strip(" \t\n`*.\"'").lower()
    return _BY_TOKEN[check].get(token)


def parse_verdict(raw: str, check: Check | str) -> Verdict:
    check = Check(check)
    reasoning, response = extract_schema_object(raw)
    value = _match_value(response, check)
    if value is None:
        raise ParseFailure(f"{response!r} is not an allowed {check.value} outcome", raw)
    return Verdict(check, value, reasoning, raw)


# ---------------------------------------------------------------- backend calls

REPAIR_INSTRUCTION = (
    'Your previous reply could not be parsed. Return only the schema object '
    '{"Reasoning": "...", "Response": "..."} and nothing else.'
)


def ask_with_repair(llm: Backend, prompt: str, meta: RequestMeta, parse: Callable[[str], object], *,
                    temperature: float = 0.0, images: tuple[str, ...] = ()):
    """One request, plus one repair round if the first reply does not parse.

    Returns ``(parsed, raw)``; raises ``ParseFailure`` carrying the last raw
    reply when both rounds fail.
    """
    raw = llm.chat(ChatRequest.single(prompt, meta, temperature=temperature, images=images))
    try:
        return parse(raw), raw
    except ParseFailure:
        pass
    repair_meta = RequestMeta(meta.template_id, meta.qid, meta.doc_id, meta.step, repair=True)
    req = ChatRequest(
        (Message("user", prompt, images), Message("assistant", raw), Message("user", REPAIR_INSTRUCTION)),
        repair_meta, temperature=temperature,
    )
    raw2 = llm.chat(req)
    try:
        return parse(raw2), raw2
    except ParseFailure as exc:
        raise ParseFailure(str(exc), raw2) from None


def _verdict(check: Check, llm: Backend, slots: dict, meta: RequestMeta, templates, temperature: float) -> Verdict:
    templates = templates or default_templates()
    prompt = build_prompt(templates[check.value], slots)
    try:
        verdict, _ = ask_with_repair(llm, prompt, meta, lambda r: parse_verdict(r, check), temperature=temperature)
        return verdict
    except ParseFailure as exc:
        return Verdict(check, Value.FALSE, "", exc.raw, defaulted=True)


def is_rel(query: Query, content: str, title: str, llm: Backend, *, doc_id: str | None = None,
           templates=None, temperature: float = 0.0) -> Verdict:
    if not content:
        raise ContractError("is_rel needs non-empty content")
    meta = RequestMeta(Check.IS_REL.value, query.qid, doc_id)
    slots = {"Content": content, "Title": title, "Question": query.question}
    return _verdict(Check.IS_REL, llm, slots, meta, templates, temperature)


def is_use(query: Query, answer: str, context: str, llm: Backend, *, doc_id: str = "answer",
           step: str | None = None, templates=None, temperature: float = 0.0) -> Verdict:
    if not answer:
        raise ContractError("is_use needs a non-empty answer")
    meta = RequestMeta(Check.IS_USE.value, query.qid, doc_id, step)
    slots = {"Content": context, "Question": query.question, "Answer": answer}
    return _verdict(Check.IS_USE, llm, slots, meta, templates, temperature)


def is_sup(query: Query, answer: str, context: str, llm: Backend, *, doc_id: str = "answer",
           step: str | None = None, templates=None, temperature: float = 0.0) -> Verdict:
    if not context:
        raise ContractError("is_sup needs non-empty context")
    meta = RequestMeta(Check.IS_SUP.value, query.qid, doc_id, step)
    slots = {"Content": context, "Question": query.question, "Answer": answer}
    return _verdict(Check.IS_SUP, llm, slots, meta, templates, temperature)
