"""Adaptive retrieval loop and the fixed top-k baseline.

Per query the engine walks the similarity ranking batch by batch. Every
document in a batch is checked for relevance; relevant ones join the context
store ``C`` and raise the found flag ``F``. Once a batch ends with ``F`` set,
an answer is drafted and checked for usefulness (with bounded regeneration)
and then for support:

========  ===================================================
isSup     action
========  ===================================================
True      return the answer (verified)
Partial   keep ``C``, clear ``F``, continue with the next batch
False     clear ``C`` and ``F``, continue with the next batch
========  ===================================================

Retrieval resumes from the batch cursor; a document is never examined twice.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .backends import BackendSet
from .caption import CaptionCache, specific_caption
from .config import RunConfig
from .corpus import CorpusBundle, Document, Query
from .embed_index import VectorIndex, batches, rank_query
from .errors import BackendError, GenerationFailure, SamRagError
from .generate import Answer, ContextItem, Source, generate_answer, join_context, self_consistent
from .io import dumps, read_jsonl, write_jsonl
from .verify import TemplateSet, Value, Verdict, default_templates, is_rel, is_sup, is_use

log = logging.getLogger(__name__)


class Mode(str, Enum):
    SAM_RAG = "sam_rag"
    CONVENTIONAL = "conventional"


class Status(str, Enum):
    VERIFIED = "verified"
    UNVERIFIED_BUDGET = "unverified_budget"
    UNVERIFIED = "unverified"  # baseline answers, never checked
    FAILED = "failed"


@dataclass
class RetrievalState:
    flag_found: bool = False
    context: list[ContextItem] = field(default_factory=list)
    cursor: int = 0
    docs_examined: int = 0
    regen_count: int = 0

    def context_ids(self) -> tuple[str, ...]:
        return tuple(c.doc_id for c in self.context)

    def add(self, item: ContextItem) -> None:
        if item.doc_id in self.context_ids():
            raise AssertionError(f"{item.doc_id!r} already in context")
        self.context.append(item)
        self.flag_found = True

    def snapshot(self) -> tuple[bool, tuple[str, ...], int]:
        return (self.flag_found, self.context_ids(), self.cursor)


@dataclass(frozen=True)
class TraceEntry:
    doc_id: str
    check: str
    value: str
    defaulted: bool = False


@dataclass
class RunRecord:
    qid: str
    mode: str
    final_answer: Answer | None = None
    answer_status: str = Status.FAILED.value
    docs_examined: int = 0
    context_size_final: int = 0
    context_ids: list[str] = field(default_factory=list)
    verdict_trace: list[TraceEntry] = field(default_factory=list)
    regen_count: int = 0
    ranking: list[str] = field(default_factory=list)
    error: str | None = None

    def note(self, doc_id: str, v: Verdict) -> None:
        self.verdict_trace.append(TraceEntry(doc_id, v.check.value, v.value.value, v.defaulted))

    def to_dict(self) -> dict:
        a = self.final_answer
        return {
            "qid": self.qid,
            "mode": self.mode,
            "final_answer": None if a is None else
            {"text": a.text, "reasoning": a.reasoning, "attempt": a.attempt, "votes": a.votes},
            "answer_status": self.answer_status,
            "docs_examined": self.docs_examined,
            "context_size_final": self.context_size_final,
            "context_ids": list(self.context_ids),
            "verdict_trace": [[t.doc_id, t.check, t.value, t.defaulted] for t in self.verdict_trace],
            "regen_count": self.regen_count,
            "ranking": list(self.ranking),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        a = d.get("final_answer")
        return cls(
            qid=d["qid"], mode=d["mode"],
            final_answer=None if a is None else Answer(a["text"], a.get("reasoning", ""), a.get("attempt", 1), a.get("votes")),
            answer_status=d["answer_status"], docs_examined=d["docs_examined"],
            context_size_final=d["context_size_final"], context_ids=list(d.get("context_ids", [])),
            verdict_trace=[TraceEntry(*t) for t in d.get("verdict_trace", [])],
            regen_count=d.get("regen_count", 0), ranking=list(d.get("ranking", [])), error=d.get("error"),
        )


Observer = Callable[[str, RetrievalState], None]


def _noop(event: str, state: RetrievalState) -> None:
    pass


class Engine:
    """Runs queries against one corpus, index and backend set.

    The caption cache is the only state shared between queries.
    """

    def __init__(self, bundle: CorpusBundle, index: VectorIndex, backends: BackendSet, cfg: RunConfig | None = None,
                 cache: CaptionCache | None = None, templates: TemplateSet | None = None):
        self.bundle = bundle
        self.index = index
        self.backends = backends
        self.cfg = cfg or RunConfig()
        self.cache = cache if cache is not None else CaptionCache()
        if templates is None:
            templates = TemplateSet.load(self.cfg.template_dir) if self.cfg.template_dir else default_templates()
        self.templates = templates

    # -- helpers

    def _ranking(self, query: Query, record: RunRecord):
        hits = rank_query(query.question, self.index, self.backends.embedder, self.cfg.query_prefix)
        record.ranking = [h.doc_id for h in hits[: self.cfg.ranking_depth]]
        return hits

    def context_item(self, query: Query, doc: Document) -> ContextItem:
        if doc.is_image:
            cap = specific_caption(query, doc, self.backends.vlm, self.cache, templates=self.templates,
                                   temperature=self.cfg.temperature_verification)
            return ContextItem(doc.id, cap.text, Source.SPECIFIC_CAPTION, doc.title)
        return ContextItem(doc.id, doc.body or "", Source.TEXT_BODY, doc.title)

    def _draft(self, query: Query, context, attempt: int, step: str) -> Answer:
        cfg = self.cfg
        if cfg.self_consistency_enabled:
            return self_consistent(query, context, self.backends.generator, cfg.self_consistency_n, attempt,
                                   step=step, templates=self.templates, temperature=cfg.temperature_generation)
        return generate_answer(query, context, self.backends.generator, attempt, step=step,
                               templates=self.templates, temperature=cfg.temperature_generation)

    def _answer_round(self, query: Query, state: RetrievalState, record: RunRecord, round_no: int,
                      emit: Observer) -> tuple[Answer | None, Verdict | None]:
        """Draft, usefulness loop, then support check. Returns (answer, isSup verdict)."""
        cfg = self.cfg
        verifier = self.backends.verifier
        content = join_context(state.context)
        best = None
        attempt = 1
        while True:
            step = f"{round_no}.{attempt}"
            try:
                draft = self._draft(query, state.context, attempt, step)
            except GenerationFailure:
                draft = None
                record.verdict_trace.append(TraceEntry("answer", "generate", "failed"))
            if draft is not None:
                best = draft
                use = is_use(query, draft.text, content, verifier, step=step, templates=self.templates,
                             temperature=cfg.temperature_verification)
                record.note("answer", use)
                emit("isUse", state)
                if use.value is Value.TRUE:
                    break
            if attempt > cfg.max_regen:
                break
            attempt += 1
            state.regen_count += 1
        if best is None:
            return None, None
        sup = is_sup(query, best.text, content, verifier, step=str(round_no), templates=self.templates,
                     temperature=cfg.temperature_verification)
        record.note("answer", sup)
        return best, sup

    # -- modes

    def run_query(self, query: Query, observer: Observer | None = None) -> RunRecord:
        emit = observer or _noop
        cfg = self.cfg
        record = RunRecord(query.qid, Mode.SAM_RAG.value)
        state = RetrievalState()
        last_answer: Answer | None = None
        try:
            hits = self._ranking(query, record)
            rounds = 0
            for batch_no, batch in enumerate(batches(hits[: cfg.max_docs], cfg.batch_size), 1):
                state.cursor = batch_no
                for hit in batch:
                    doc = self.bundle.doc(hit.doc_id)
                    state.docs_examined += 1
                    item = self.context_item(query, doc)
                    rel = is_rel(query, item.text, doc.title, self.backends.verifier, doc_id=doc.id,
                                 templates=self.templates, temperature=cfg.temperature_verification)
                    record.note(doc.id, rel)
                    if rel.value is Value.TRUE:
                        state.add(item)
                    emit("isRel", state)
                if not state.flag_found:
                    continue
                rounds += 1
                answer, sup = self._answer_round(query, state, record, rounds, emit)
                if answer is not None:
                    last_answer = answer
                if sup is not None and sup.value is Value.TRUE:
                    record.final_answer = answer
                    record.answer_status = Status.VERIFIED.value
                    emit("isSup", state)
                    break
                if sup is not None and sup.value is Value.FALSE:
                    state.context.clear()
                # Partial, and a round with no usable draft, keep C
                state.flag_found = False
                emit("isSup", state)
            else:
                if state.context and last_answer is not None:
                    record.final_answer = last_answer
                    record.answer_status = Status.UNVERIFIED_BUDGET.value
                else:
                    record.answer_status = Status.FAILED.value
        except BackendError as exc:
            log.warning("query %s aborted: %s", query.qid, exc)
            record.error = str(exc)
            record.answer_status = Status.FAILED.value
            record.final_answer = None
            record.verdict_trace.append(TraceEntry("error", "backend", str(exc)))
        record.docs_examined = state.docs_examined
        record.context_size_final = len(state.context)
        record.context_ids = list(state.context_ids())
        record.regen_count = state.regen_count
        emit("end", state)
        return record

    def run_conventional(self, query: Query, k: int | None = None) -> RunRecord:
        k = self.cfg.top_k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        record = RunRecord(query.qid, Mode.CONVENTIONAL.value)
        try:
            top = self._ranking(query, record)[:k]
            record.docs_examined = record.context_size_final = len(top)
            record.context_ids = [h.doc_id for h in top]
            context = [self.context_item(query, self.bundle.doc(h.doc_id)) for h in top]
            try:
                record.final_answer = generate_answer(query, context, self.backends.generator, 1, step="1.1",
                                                      templates=self.templates,
                                                      temperature=self.cfg.temperature_generation)
                record.answer_status = Status.UNVERIFIED.value
            except GenerationFailure as exc:
                record.error = str(exc)
                record.verdict_trace.append(TraceEntry("answer", "generate", "failed"))
        except BackendError as exc:
            record.error = str(exc)
            record.answer_status = Status.FAILED.value
            record.verdict_trace.append(TraceEntry("error", "backend", str(exc)))
        return record

    def run_suite(self, queries: Iterable[Query] | None = None, mode: Mode | str = Mode.SAM_RAG,
                  parallel: int | None = None, k: int | None = None) -> list[RunRecord]:
        queries = list(self.bundle.queries if queries is None else queries)
        mode = Mode(mode)
        parallel = parallel or self.cfg.parallel

        def one(q: Query) -> RunRecord:
            try:
                return self.run_query(q) if mode is Mode.SAM_RAG else self.run_conventional(q, k)
            except SamRagError as exc:
                log.warning("query %s failed: %s", q.qid, exc)
                rec = RunRecord(q.qid, mode.value, error=str(exc))
                rec.verdict_trace.append(TraceEntry("error", type(exc).__name__, str(exc)))
                return rec

        if parallel > 1:
            with ThreadPoolExecutor(parallel) as pool:
                records = list(pool.map(one, queries))
        else:
            records = [one(q) for q in queries]
        return sorted(records, key=lambda r: r.qid)


def run_query(query: Query, engine: Engine, observer: Observer | None = None) -> RunRecord:
    return engine.run_query(query, observer)


def run_conventional(query: Query, engine: Engine, k: int = 8) -> RunRecord:
    return engine.run_conventional(query, k)


def write_trace(records: Iterable[RunRecord], path) -> None:
    write_jsonl(path, (r.to_dict() for r in records))


def read_trace(path) -> list[RunRecord]:
    return [RunRecord.from_dict(d) for d in read_jsonl(path)]


def trace_text(records: Iterable[RunRecord]) -> str:
    return "".join(dumps(r.to_dict()) + "\n" for r in records)
