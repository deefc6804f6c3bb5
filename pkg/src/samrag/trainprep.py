"""Training artefacts for the retriever and the vision-language model.

Nothing here trains a model. The module computes the contrastive loss as a
plain function, mines hard negatives into triplet files, and builds filtered
instruction-tuning records from a teacher backend.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .backends import BackendSet, RequestMeta
from .config import RunConfig
from .corpus import CorpusBundle, Document, Query
from .embed_index import VectorIndex, index_text, rank_query
from .errors import ContractError, EmptyNegatives, ParseFailure, BackendError
from .evalx import exact_match
from .generate import ContextItem, join_context
from .io import write_jsonl
from .verify import Check, Value, ask_with_repair, build_prompt, default_templates, extract_schema_object, parse_verdict

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- InfoNCE

def info_nce(pos_sim: float, neg_sims: Sequence[float], tau: float) -> float:
    """``-log(exp(pos/tau) / sum(exp(s/tau)))`` over the positive and all negatives.

    Written as ``log(1 + sum(exp(d_i)))`` with ``d_i = (neg_i - pos) / tau``
    and the largest exponent factored out, which keeps full relative precision
    when the loss is tiny and never overflows.
    """
    if not tau > 0:
        raise ContractError("tau must be > 0")
    if not neg_sims:
        raise ContractError("at least one negative similarity is required")
    values = [pos_sim, *neg_sims]
    if not all(math.isfinite(v) for v in values):
        raise ContractError("similarities must be finite")
    diffs = [(n - pos_sim) / tau for n in neg_sims]
    top = max(0.0, max(diffs))
    if top == 0.0:
        return math.log1p(math.fsum(math.exp(d) for d in diffs))
    return top + math.log(math.fsum([math.exp(-top)] + [math.exp(d - top) for d in diffs]))


# ---------------------------------------------------------------- contrastive pairs

@dataclass(frozen=True)
class ContrastivePair:
    qid: str
    question: str
    pos_text: str
    neg_texts: tuple[str, ...]
    pos_id: str = ""
    neg_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.neg_texts:
            raise ValueError("a contrastive pair needs at least one negative")


def mine_negatives(query: Query, index: VectorIndex, bundle: CorpusBundle, embedder, rng: random.Random,
                   n_samples: int = 10, window: int = 50, prefix: str = "") -> list[Document]:
    """Sample ``min(n_samples, available)`` docs from the top ``window`` non-gold hits."""
    gold = set(query.gold_support_ids)
    gold_texts = {index_text(bundle.doc(g)) for g in gold}
    hits = rank_query(query.question, index, embedder, prefix)
    pool = [h.doc_id for h in hits
            if h.doc_id not in gold and index_text(bundle.doc(h.doc_id)) not in gold_texts][:window]
    if not pool:
        raise EmptyNegatives(f"query {query.qid!r} has no non-gold documents to sample")
    return [bundle.doc(i) for i in rng.sample(pool, min(n_samples, len(pool)))]


@dataclass
class ContrastiveDataset:
    pairs: list[ContrastivePair]
    skipped: list[str] = field(default_factory=list)


def build_contrastive_dataset(bundle: CorpusBundle, index: VectorIndex, embedder, cfg: RunConfig | None = None,
                              rng: random.Random | None = None) -> ContrastiveDataset:
    cfg = cfg or RunConfig()
    rng = rng or random.Random(cfg.seed)
    out = ContrastiveDataset([])
    for q in bundle.queries:
        if not q.gold_support_ids:
            out.skipped.append(q.qid)
            continue
        try:
            negs = mine_negatives(q, index, bundle, embedder, rng, cfg.neg_samples, cfg.neg_window, cfg.query_prefix)
        except EmptyNegatives:
            out.skipped.append(q.qid)
            continue
        for gid in q.gold_support_ids:
            out.pairs.append(ContrastivePair(q.qid, q.question, index_text(bundle.doc(gid)),
                                             tuple(index_text(d) for d in negs), gid, tuple(d.id for d in negs)))
    if out.skipped:
        log.warning("skipped %d queries without gold support or negatives", len(out.skipped))
    return out


def write_contrastive(pairs: Sequence[ContrastivePair], path) -> None:
    # pos is a one-element list: the triplet format expected by common embedder fine-tuning tools
    write_jsonl(path, ({"query": p.question, "pos": [p.pos_text], "neg": list(p.neg_texts)} for p in pairs))


# ---------------------------------------------------------------- distillation

class Task(str, Enum):
    CAPTION = "caption"
    IS_REL = "isRel"
    QA = "qa"
    IS_USE = "isUse"
    IS_SUP = "isSup"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class DistillRecord:
    task: Task
    polarity: Polarity
    qid: str
    doc_id: str
    instruction: str
    input: str
    output_reasoning: str
    output_response: str
    answer: str = ""  # answer the record is judged against (qa, caption probe, isUse)

    def output(self) -> str:
        return json.dumps({"Reasoning": self.output_reasoning, "Response": self.output_response}, ensure_ascii=False)

    def identity(self) -> tuple:
        return (self.task.value, self.polarity.value, self.qid, self.doc_id, self.output_response, self.answer)


def retain(rec: DistillRecord, golds: Sequence[str]) -> bool:
    resp = rec.output_response
    if rec.task in (Task.CAPTION, Task.QA):
        return bool(exact_match(rec.answer, golds))
    if rec.task is Task.IS_REL:
        return resp == (Value.TRUE.value if rec.polarity is Polarity.POSITIVE else Value.FALSE.value)
    if rec.task is Task.IS_USE:
        expected = Value.TRUE.value if exact_match(rec.answer, golds) else Value.FALSE.value
        return resp == expected
    if rec.task is Task.IS_SUP:
        if rec.polarity is Polarity.POSITIVE:
            return resp in (Value.TRUE.value, Value.PARTIAL.value)
        return resp == Value.FALSE.value
    raise ValueError(rec.task)


@dataclass
class DistillDataset:
    records: list[DistillRecord]
    log: list[DistillRecord]
    skipped: list[tuple[str, str, str]] = field(default_factory=list)  # (qid, doc_id, reason)

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for rec in self.log:
            c = out.setdefault(f"{rec.task.value}/{rec.polarity.value}", {"generated": 0, "retained": 0})
            c["generated"] += 1
        for rec in self.records:
            out[f"{rec.task.value}/{rec.polarity.value}"]["retained"] += 1
        return dict(sorted(out.items()))


class _Teacher:
    def __init__(self, backends: BackendSet, cfg: RunConfig, templates):
        self.llm = backends.generator
        self.temperature = cfg.temperature_generation
        self.templates = templates

    def ask(self, tid: str, slots: dict, meta: RequestMeta, parse, images=()):
        prompt = build_prompt(self.templates[tid], slots)
        parsed, _ = ask_with_repair(self.llm, prompt, meta, parse, temperature=self.temperature, images=images)
        return prompt, parsed


def _parse_pair(raw: str) -> tuple[str, str]:
    reasoning, response = extract_schema_object(raw)
    if not response.strip():
        raise ParseFailure("empty Response", raw)
    return reasoning, response.strip()


def build_distill_dataset(bundle: CorpusBundle, index: VectorIndex, backends: BackendSet,
                          cfg: RunConfig | None = None, rng: random.Random | None = None,
                          templates=None) -> DistillDataset:
    """Generate teacher reasoning for every stage and keep what agrees with gold.

    Stages per query: question-specific captions of gold images (kept when a
    QA probe on the caption matches gold), isRel on gold docs (kept if True)
    and on sampled top-ranked negatives (kept if False), a coarse answer from
    the relevant gold docs (kept if it matches gold), isUse on every doc (kept
    when the verdict agrees with whether the answer matches gold), and isSup
    (positives kept on True or Partial, negatives on False).
    """
    cfg = cfg or RunConfig()
    rng = rng or random.Random(cfg.seed)
    teacher = _Teacher(backends, cfg, templates or default_templates())
    out = DistillDataset([], [])

    def emit(rec: DistillRecord, golds) -> None:
        out.log.append(rec)
        if retain(rec, golds):
            out.records.append(rec)

    for q in bundle.queries:
        if not q.gold_support_ids:
            out.skipped.append((q.qid, "", "no gold support"))
            continue
        golds = q.gold_answers
        gold_docs = [bundle.doc(i) for i in q.gold_support_ids]
        hits = rank_query(q.question, index, backends.embedder, cfg.query_prefix)
        pool = [h.doc_id for h in hits if h.doc_id not in set(q.gold_support_ids)][: cfg.distill_neg_window]
        neg_docs = [bundle.doc(i) for i in rng.sample(pool, min(len(gold_docs), len(pool)))]
        docs = [(d, Polarity.POSITIVE) for d in gold_docs] + [(d, Polarity.NEGATIVE) for d in neg_docs]

        content: dict[str, str] = {}
        for d, pol in docs:
            if not d.is_image:
                content[d.id] = d.body or ""
                continue
            try:
                prompt, (reasoning, response) = teacher.ask(
                    "image_inference", {"Title": d.title, "Question": q.question},
                    RequestMeta("image_inference", q.qid, d.id), _parse_pair, images=(d.image_ref,))
            except (ParseFailure, BackendError) as exc:
                out.skipped.append((q.qid, d.id, f"caption: {exc}"))
                continue
            content[d.id] = reasoning.strip() or response
            if pol is Polarity.POSITIVE:
                try:
                    _, (_, probe) = teacher.ask(
                        "qa", {"Content": join_context([ContextItem(d.id, content[d.id], title=d.title)]),
                               "Question": q.question},
                        RequestMeta("qa", q.qid, d.id, "caption"), _parse_pair)
                except (ParseFailure, BackendError) as exc:
                    out.skipped.append((q.qid, d.id, f"caption probe: {exc}"))
                    continue
                emit(DistillRecord(Task.CAPTION, pol, q.qid, d.id, prompt, d.image_ref or "", reasoning, response,
                                   probe), golds)

        def verdict_stage(check: Check, task: Task, extra: dict, answer: str = "") -> dict[str, str]:
            seen = {}
            for d, pol in docs:
                if d.id not in content or not content[d.id]:
                    continue
                slots = {"Content": content[d.id], "Question": q.question, **extra}
                if check is Check.IS_REL:
                    slots["Title"] = d.title
                try:
                    prompt, v = teacher.ask(check.value, slots, RequestMeta(check.value, q.qid, d.id),
                                            lambda r: parse_verdict(r, check))
                except (ParseFailure, BackendError) as exc:
                    out.skipped.append((q.qid, d.id, f"{check.value}: {exc}"))
                    continue
                seen[d.id] = v.value.value
                emit(DistillRecord(task, pol, q.qid, d.id, prompt, "", v.reasoning, v.value.value, answer), golds)
            return seen

        rel = verdict_stage(Check.IS_REL, Task.IS_REL, {})
        relevant = [d for d in gold_docs if rel.get(d.id) == Value.TRUE.value]
        if not relevant:
            continue
        ctx = join_context([ContextItem(d.id, content[d.id], title=d.title) for d in relevant])
        try:
            prompt, (reasoning, answer) = teacher.ask(
                "qa", {"Content": ctx, "Question": q.question}, RequestMeta("qa", q.qid, "answer", "distill"),
                _parse_pair)
        except (ParseFailure, BackendError) as exc:
            out.skipped.append((q.qid, "answer", f"qa: {exc}"))
            continue
        emit(DistillRecord(Task.QA, Polarity.POSITIVE, q.qid, "answer", prompt, "", reasoning, answer, answer), golds)
        verdict_stage(Check.IS_USE, Task.IS_USE, {"Answer": answer}, answer)
        verdict_stage(Check.IS_SUP, Task.IS_SUP, {"Answer": answer}, answer)

    for qid, doc_id, reason in out.skipped:
        log.info("distill skip %s/%s: %s", qid, doc_id, reason)
    return out


def write_distill(records: Sequence[DistillRecord], path) -> None:
    write_jsonl(path, ({"instruction": r.instruction, "input": r.input, "output": r.output()} for r in records))
