"""Document collection and query set with gold labels.

Both files are line-delimited JSON. A corpus line looks like::

    {"id": "d1", "modality": "text", "title": "...", "text": "...", "image_path": null}

and a query line like::

    {"qid": "q1", "question": "...", "answers": ["..."], "support_ids": ["d1"], "qtype": "TextQ"}

Bundles are immutable; attaching raw captions returns a new bundle.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import CorpusParseError, IntegrityError
from .io import write_jsonl


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"


class QType(str, Enum):
    TEXT = "TextQ"
    IMAGE = "ImageQ"


@dataclass(frozen=True)
class Document:
    id: str
    modality: Modality
    title: str
    body: str | None = None
    image_ref: str | None = None
    raw_caption: str | None = None

    @property
    def is_image(self) -> bool:
        return self.modality is Modality.IMAGE


@dataclass(frozen=True)
class Query:
    qid: str
    question: str
    gold_answers: tuple[str, ...]
    gold_support_ids: tuple[str, ...] = ()
    qtype: QType = QType.TEXT


@dataclass(frozen=True)
class Finding:
    cls: str
    subject: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def classes(self) -> list[str]:
        return [f.cls for f in self.findings]


@dataclass(frozen=True)
class CorpusBundle:
    documents: Mapping[str, Document]
    queries: tuple[Query, ...] = ()
    # file order; dict order is kept too but this is the canonical source
    order: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.order:
            object.__setattr__(self, "order", tuple(self.documents))
        if not isinstance(self.documents, MappingProxyType):
            object.__setattr__(self, "documents", MappingProxyType(dict(self.documents)))

    @classmethod
    def from_lists(cls, documents: Iterable[Document], queries: Iterable[Query] = ()) -> "CorpusBundle":
        docs = list(documents)
        return cls({d.id: d for d in docs}, tuple(queries), tuple(d.id for d in docs))

    def __len__(self) -> int:
        return len(self.order)

    def __eq__(self, other):
        if not isinstance(other, CorpusBundle):
            return NotImplemented
        return (
            self.order == other.order
            and dict(self.documents) == dict(other.documents)
            and self.queries == other.queries
        )

    __hash__ = None

    def doc(self, doc_id: str) -> Document:
        return self.documents[doc_id]

    def ordered_documents(self) -> list[Document]:
        return [self.documents[i] for i in self.order]

    def query(self, qid: str) -> Query:
        for q in self.queries:
            if q.qid == qid:
                return q
        raise KeyError(qid)

    def with_raw_captions(self, captions: Mapping[str, str]) -> "CorpusBundle":
        docs = {}
        for doc_id in self.order:
            d = self.documents[doc_id]
            if d.is_image and doc_id in captions:
                d = dataclasses.replace(d, raw_caption=captions[doc_id])
            docs[doc_id] = d
        return CorpusBundle(docs, self.queries, self.order)

    def with_queries(self, queries: Iterable[Query]) -> "CorpusBundle":
        return CorpusBundle(self.documents, tuple(queries), self.order)


def validate(bundle: CorpusBundle) -> ValidationReport:
    findings: list[Finding] = []
    seen: set[str] = set()
    for doc_id in bundle.order:
        if doc_id in seen:
            findings.append(Finding("duplicate-id", doc_id, f"document id {doc_id!r} appears more than once"))
        seen.add(doc_id)
    for doc_id in dict.fromkeys(bundle.order):
        d = bundle.documents.get(doc_id)
        if d is None:
            findings.append(Finding("dangling-order", doc_id, f"order lists unknown id {doc_id!r}"))
            continue
        if d.modality is Modality.TEXT and (d.body is None or d.image_ref is not None):
            findings.append(Finding("modality-mismatch", d.id, "text documents need a body and no image_ref"))
        if d.modality is Modality.IMAGE:
            if d.image_ref is None or d.body is not None:
                findings.append(Finding("modality-mismatch", d.id, "image documents need an image_ref and no body"))
            if not d.title.strip():
                findings.append(Finding("image-title-missing", d.id, "image document has an empty title"))
    qids: set[str] = set()
    for q in bundle.queries:
        if q.qid in qids:
            findings.append(Finding("duplicate-qid", q.qid, f"query id {q.qid!r} appears more than once"))
        qids.add(q.qid)
        if not q.gold_answers:
            findings.append(Finding("gold-answers-empty", q.qid, "query has no gold answers"))
        for sid in q.gold_support_ids:
            if sid not in bundle.documents:
                findings.append(Finding("dangling-support-id", q.qid, f"query {q.qid!r} references missing document {sid!r}"))
    return ValidationReport(tuple(findings))


def _records(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise CorpusParseError(path, line_no, "record is not an object")
            yield line_no, rec


def _document(rec: dict, path: Path, line_no: int) -> Document:
    try:
        modality = Modality(rec["modality"])
        doc_id = rec["id"]
    except (KeyError, ValueError) as exc:
        raise CorpusParseError(path, line_no, f"bad document record: {exc!r}") from None
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusParseError(path, line_no, "document id must be a non-empty string")
    return Document(
        id=doc_id,
        modality=modality,
        title=rec.get("title") or "",
        body=rec.get("text"),
        image_ref=rec.get("image_path"),
        raw_caption=rec.get("raw_caption"),
    )


def _query(rec: dict, path: Path, line_no: int) -> Query:
    try:
        return Query(
            qid=str(rec["qid"]),
            question=str(rec["question"]),
            gold_answers=tuple(str(a) for a in rec["answers"]),
            gold_support_ids=tuple(str(s) for s in rec.get("support_ids") or ()),
            qtype=QType(rec.get("qtype", "TextQ")),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CorpusParseError(path, line_no, f"bad query record: {exc!r}") from None


def load_documents(path) -> list[Document]:
    path = Path(path)
    docs: list[Document] = []
    lines: dict[str, int] = {}
    for line_no, rec in _records(path):
        d = _document(rec, path, line_no)
        if d.id in lines:
            raise IntegrityError(f"duplicate document id {d.id!r} on lines {lines[d.id]} and {line_no}")
        lines[d.id] = line_no
        docs.append(d)
    return docs


def load_queries(path) -> list[Query]:
    path = Path(path)
    return [_query(rec, path, line_no) for line_no, rec in _records(path)]


def load_corpus(path, queries_path=None) -> CorpusBundle:
    """Load a corpus file (and optionally its query file) into a validated bundle.

    Raises ``CorpusParseError`` for malformed lines and ``IntegrityError`` for
    duplicate ids, dangling gold support, or any other broken invariant.
    """
    docs = load_documents(path)
    queries = load_queries(queries_path) if queries_path is not None else []
    bundle = CorpusBundle.from_lists(docs, queries)
    report = validate(bundle)
    if not report.ok:
        f = report.findings[0]
        raise IntegrityError(f"{f.cls}: {f.message}")
    return bundle


def document_record(d: Document) -> dict:
    rec = {
        "id": d.id,
        "modality": d.modality.value,
        "title": d.title,
        "text": d.body,
        "image_path": d.image_ref,
    }
    if d.raw_caption is not None:
        rec["raw_caption"] = d.raw_caption
    return rec


def query_record(q: Query) -> dict:
    return {
        "qid": q.qid,
        "question": q.question,
        "answers": list(q.gold_answers),
        "support_ids": list(q.gold_support_ids),
        "qtype": q.qtype.value,
    }


def dump_documents(bundle: CorpusBundle, path) -> None:
    write_jsonl(path, (document_record(d) for d in bundle.ordered_documents()))


def dump_queries(bundle: CorpusBundle, path) -> None:
    write_jsonl(path, (query_record(q) for q in bundle.queries))
