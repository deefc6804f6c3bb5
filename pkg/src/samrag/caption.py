"""Modality alignment: image documents become text.

Raw captions are query-agnostic and only feed the index. Specific captions are
produced per (query, image) with the image-inference template and are what the
verifiers and the generator see.
"""

from __future__ import annotations

import threading
from concurrent.futures import Future
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .backends import Backend, ChatRequest, RequestMeta
from .corpus import CorpusBundle, Document, Query
from .errors import BackendError, ContractError, IntegrityError, ParseFailure
from .io import read_jsonl, write_jsonl
from .verify import build_prompt, default_templates, extract_schema_object


class CaptionKind(str, Enum):
    RAW = "raw"
    SPECIFIC = "specific"


@dataclass(frozen=True)
class CaptionRecord:
    doc_id: str
    kind: CaptionKind
    text: str
    qid: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("caption text must be non-empty")
        if (self.kind is CaptionKind.SPECIFIC) != (self.qid is not None):
            raise ValueError("qid is required for specific captions and forbidden for raw ones")

    @property
    def key(self) -> tuple[str, str, str | None]:
        return (self.doc_id, self.kind.value, self.qid)


class CaptionCache:
    """Thread-safe caption store with first-writer-wins and request coalescing.

    ``reads`` logs every lookup as ``(kind, doc_id, qid)`` so callers can audit
    which caption kind each stage consumed.
    """

    def __init__(self, records=()):
        self._records: dict[tuple, CaptionRecord] = {}
        self._inflight: dict[tuple, Future] = {}
        self._lock = threading.Lock()
        self.reads: list[tuple[str, str, str | None]] = []
        for r in records:
            self.put(r)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key) -> bool:
        return key in self._records

    def records(self) -> list[CaptionRecord]:
        with self._lock:
            return list(self._records.values())

    def put(self, record: CaptionRecord) -> CaptionRecord:
        with self._lock:
            return self._records.setdefault(record.key, record)

    def get(self, doc_id: str, kind: CaptionKind, qid: str | None = None) -> CaptionRecord | None:
        key = (doc_id, CaptionKind(kind).value, qid)
        with self._lock:
            self.reads.append((key[1], doc_id, qid))
            return self._records.get(key)

    def get_or_create(self, doc_id: str, kind: CaptionKind, qid: str | None,
                      make: Callable[[], CaptionRecord]) -> CaptionRecord:
        key = (doc_id, CaptionKind(kind).value, qid)
        with self._lock:
            self.reads.append((key[1], doc_id, qid))
            if key in self._records:
                return self._records[key]
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = self._inflight[key] = Future()
        if not owner:
            return fut.result()
        try:
            record = make()
        except BaseException as exc:
            with self._lock:
                del self._inflight[key]
            fut.set_exception(exc)
            raise
        with self._lock:
            record = self._records.setdefault(key, record)
            del self._inflight[key]
        fut.set_result(record)
        return record

    def save(self, path) -> None:
        recs = sorted(self.records(), key=lambda r: (r.doc_id, r.kind.value, r.qid or ""))
        write_jsonl(path, ({"doc_id": r.doc_id, "kind": r.kind.value, "qid": r.qid, "text": r.text} for r in recs))

    @classmethod
    def load(cls, path) -> "CaptionCache":
        cache = cls()
        for rec in read_jsonl(path):
            r = CaptionRecord(rec["doc_id"], CaptionKind(rec["kind"]), rec["text"], rec.get("qid"))
            if r.key in cache:
                raise IntegrityError(f"duplicate caption record {r.key}")
            cache.put(r)
        return cache


def _require_image(doc: Document) -> None:
    if not doc.is_image:
        raise ContractError(f"document {doc.id!r} is not an image")


def raw_caption(doc: Document, vlm: Backend, cache: CaptionCache, *, templates=None,
                temperature: float = 0.0) -> CaptionRecord:
    _require_image(doc)
    if not doc.title.strip():
        raise ContractError(f"image document {doc.id!r} has no title to constrain its caption")

    def make() -> CaptionRecord:
        prompt = build_prompt((templates or default_templates())["raw_caption"], {"Title": doc.title})
        meta = RequestMeta("raw_caption", None, doc.id)
        text = vlm.chat(ChatRequest.single(prompt, meta, temperature=temperature, images=(doc.image_ref,))).strip()
        if not text:
            raise BackendError(f"empty raw caption for {doc.id!r}", transient=False)
        return CaptionRecord(doc.id, CaptionKind.RAW, text)

    return cache.get_or_create(doc.id, CaptionKind.RAW, None, make)


def specific_caption(query: Query, doc: Document, vlm: Backend, cache: CaptionCache, *, templates=None,
                     temperature: float = 0.0) -> CaptionRecord:
    """Question-specific caption; the text is the reasoning of the image-inference reply."""
    _require_image(doc)

    def make() -> CaptionRecord:
        tpl = (templates or default_templates())["image_inference"]
        prompt = build_prompt(tpl, {"Title": doc.title, "Question": query.question})
        meta = RequestMeta("image_inference", query.qid, doc.id)
        raw = vlm.chat(ChatRequest.single(prompt, meta, temperature=temperature, images=(doc.image_ref,)))
        try:
            text = extract_schema_object(raw)[0].strip()
        except ParseFailure:
            text = raw.strip()
        if not text:
            raise BackendError(f"empty specific caption for ({query.qid!r}, {doc.id!r})", transient=False)
        return CaptionRecord(doc.id, CaptionKind.SPECIFIC, text, query.qid)

    return cache.get_or_create(doc.id, CaptionKind.SPECIFIC, query.qid, make)


def caption_corpus(bundle: CorpusBundle, vlm: Backend, cache: CaptionCache, **kw) -> CorpusBundle:
    """Raw-caption every image document and return a bundle with captions attached."""
    captions = {d.id: raw_caption(d, vlm, cache, **kw).text for d in bundle.ordered_documents() if d.is_image}
    return bundle.with_raw_captions(captions)


def attach_cached_captions(bundle: CorpusBundle, cache: CaptionCache) -> CorpusBundle:
    captions = {}
    for d in bundle.ordered_documents():
        if d.is_image:
            rec = cache.get(d.id, CaptionKind.RAW)
            if rec is not None:
                captions[d.id] = rec.text
    return bundle.with_raw_captions(captions)
