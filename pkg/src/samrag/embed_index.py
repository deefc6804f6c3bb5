"""Dense embedding, exhaustive similarity ranking, and batch iteration."""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CorpusBundle, Document
from .errors import ContractError, IntegrityError
from .io import atomic_write_text

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class HashEmbedder:
    """Bag-of-tokens embedder for tests and offline runs.

    Each token lands in bucket ``blake2b-64(token) mod dimension``; bucket
    counts are L2-normalised. Text without tokens maps to the zero vector.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.embedder_id = f"hash-blake2b-{dimension}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            vec[self.bucket(tok)] += 1.0
        norm = math.sqrt(math.fsum(vec * vec))
        if norm > 0:
            vec /= norm
        return vec


class LiveEmbedder:
    """Embeddings from an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, backend, model: str, dimension: int):
        self.backend = backend
        self.model = model
        self.dimension = dimension
        self.embedder_id = f"live-{model}-{dimension}"

    def embed(self, text: str) -> np.ndarray:
        data = self.backend.post_json("/embeddings", {"model": self.model, "input": text})
        vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        return check_vector(vec, self.dimension)


def check_vector(vec: np.ndarray, dimension: int) -> np.ndarray:
    if vec.shape != (dimension,):
        raise ContractError(f"embedding has shape {vec.shape}, expected ({dimension},)")
    if not np.all(np.isfinite(vec)):
        raise ContractError("embedding contains non-finite values")
    return vec


def embed(text: str, embedder) -> np.ndarray:
    return check_vector(embedder.embed(text), embedder.dimension)


@dataclass(frozen=True)
class RankedHit:
    doc_id: str
    score: float


@dataclass(frozen=True)
class VectorIndex:
    embedder_id: str
    dimension: int
    doc_ids: tuple[str, ...]
    matrix: np.ndarray  # (n_docs, dimension), rows in corpus order

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def __len__(self) -> int:
        return len(self.doc_ids)

    def vector(self, doc_id: str) -> np.ndarray:
        return self.matrix[self.doc_ids.index(doc_id)]


def index_text(doc: Document) -> str:
    """Text a document is indexed under: the body, or the raw caption for images."""
    if doc.is_image:
        if not doc.raw_caption:
            raise ContractError(f"image document {doc.id!r} has no raw caption; run captioning first")
        return doc.raw_caption
    return doc.body or ""


def build_index(bundle: CorpusBundle, embedder) -> VectorIndex:
    docs = bundle.ordered_documents()
    texts = [index_text(d) for d in docs]  # fail fast before any embedding call
    rows = [embed(t, embedder) for t in texts]
    matrix = np.vstack(rows) if rows else np.zeros((0, embedder.dimension))
    return VectorIndex(embedder.embedder_id, embedder.dimension, tuple(d.id for d in docs), matrix)


def score_all(index: VectorIndex, query_vec: np.ndarray) -> list[RankedHit]:
    """Rank every indexed document by dot product, highest first.

    Scores are exactly rounded (``math.fsum`` over the elementwise products),
    so equal vectors always tie exactly; ties go to the earlier document.
    """
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise ContractError(f"query vector has shape {q.shape}, index dimension is {index.dimension}")
    products = index.matrix * q
    scores = np.array([math.fsum(row) for row in products], dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [RankedHit(index.doc_ids[i], float(scores[i])) for i in order]


def batches(hits: Sequence[RankedHit], batch_size: int) -> list[list[RankedHit]]:
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    return [list(hits[i:i + batch_size]) for i in range(0, len(hits), batch_size)]


def rank_query(question: str, index: VectorIndex, embedder, prefix: str = "") -> list[RankedHit]:
    if embedder.embedder_id != index.embedder_id:
        raise ContractError(f"index built with {index.embedder_id!r}, active embedder is {embedder.embedder_id!r}")
    return score_all(index, embed(prefix + question, embedder))


def save_index(index: VectorIndex, path) -> None:
    lines = [json.dumps({"embedder_id": index.embedder_id, "dimension": index.dimension, "count": len(index)})]
    for doc_id, row in zip(index.doc_ids, index.matrix):
        lines.append(json.dumps({"doc_id": doc_id, "vector": [float(x) for x in row]}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_index(path, embedder=None) -> VectorIndex:
    with open(Path(path), encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        rows: list[Iterable[float]] = []
        ids: list[str] = []
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                ids.append(rec["doc_id"])
                rows.append(rec["vector"])
    dim = int(header["dimension"])
    if embedder is not None and (header["embedder_id"] != embedder.embedder_id or dim != embedder.dimension):
        raise IntegrityError(
            f"index header ({header['embedder_id']}, {dim}) does not match active embedder "
            f"({embedder.embedder_id}, {embedder.dimension})"
        )
    if len(ids) != header.get("count", len(ids)):
        raise IntegrityError(f"index header promises {header['count']} entries, found {len(ids)}")
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(ids), dim)
    return VectorIndex(header["embedder_id"], dim, tuple(ids), matrix)
