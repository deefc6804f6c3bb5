"""Answer and retrieval metrics: EM, token F1, Recall@N, ARN."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .corpus import CorpusBundle, QType, Query
from .errors import ContractError, IntegrityError
from .io import atomic_write_text, dumps

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(text: str) -> str:
    """Lower text and remove punctuation, articles and extra whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _require_golds(golds: Sequence[str]) -> None:
    if not golds:
        raise ContractError("at least one gold answer is required")


def exact_match(pred: str, golds: Sequence[str]) -> int:
    _require_golds(golds)
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1_single(pred: str, gold: str) -> float:
    p_toks = normalize_answer(pred).split()
    g_toks = normalize_answer(gold).split()
    if not p_toks or not g_toks:
        return float(p_toks == g_toks)
    overlap = sum((Counter(p_toks) & Counter(g_toks)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p_toks)
    recall = overlap / len(g_toks)
    return 2 * precision * recall / (precision + recall)


def f1(pred: str, golds: Sequence[str]) -> float:
    _require_golds(golds)
    return max(_f1_single(pred, g) for g in golds)


def recall_at_n(retrieved_top_n: Sequence[str], gold_ids: Iterable[str]) -> int:
    """1 when every gold document appears in the retrieved prefix, else 0."""
    return int(set(gold_ids) <= set(retrieved_top_n))


def arn(records) -> float:
    records = list(records)
    if not records:
        raise ContractError("ARN of an empty record list is undefined")
    return sum(r.context_size_final for r in records) / len(records)


@dataclass
class SplitMetrics:
    count: int = 0
    em: float = 0.0
    f1: float = 0.0
    recall_at_n: dict[int, float] = field(default_factory=dict)
    recall_count: int = 0
    arn: float = 0.0
    gold_arn: float | None = None
    docs_examined: float = 0.0
    verified_rate: float = 0.0


@dataclass
class MetricsReport:
    splits: dict[str, SplitMetrics]
    recall_ks: list[int]
    mode: str = ""

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "recall_ks": self.recall_ks,
            "splits": {
                name: {**asdict(m), "recall_at_n": {str(k): v for k, v in m.recall_at_n.items()}}
                for name, m in self.splits.items()
            },
        }

    def render(self) -> str:
        cols = ["split", "n", "EM", "F1", "ARN", "gold ARN", "examined"] + [f"R@{k}" for k in self.recall_ks]
        rows = []
        for name in ("Text", "Image", "All"):
            m = self.splits[name]
            gold = "-" if m.gold_arn is None else f"{m.gold_arn:.2f}"
            rows.append([name, str(m.count), f"{100 * m.em:.2f}", f"{100 * m.f1:.2f}", f"{m.arn:.2f}", gold,
                         f"{m.docs_examined:.2f}"] + [f"{100 * m.recall_at_n.get(k, 0.0):.2f}" for k in self.recall_ks])
        widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(cols)]
        fmt = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join([fmt(cols), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows])


SPLIT_OF = {QType.TEXT: "Text", QType.IMAGE: "Image"}


def _split_metrics(items: list[tuple], recall_ks: Sequence[int]) -> SplitMetrics:
    m = SplitMetrics(count=len(items))
    if not items:
        return m
    n = len(items)
    m.em = sum(exact_match(pred, q.gold_answers) for q, r, pred in items) / n
    m.f1 = sum(f1(pred, q.gold_answers) for q, r, pred in items) / n
    m.arn = arn(r for _, r, _ in items)
    m.docs_examined = sum(r.docs_examined for _, r, _ in items) / n
    m.verified_rate = sum(r.answer_status == "verified" for _, r, _ in items) / n
    with_gold = [(q, r) for q, r, _ in items if q.gold_support_ids]
    m.recall_count = len(with_gold)
    if with_gold:
        for k in recall_ks:
            m.recall_at_n[k] = sum(recall_at_n(r.ranking[:k], q.gold_support_ids) for q, r in with_gold) / len(with_gold)
        m.gold_arn = sum(len(q.gold_support_ids) for q, _ in with_gold) / len(with_gold)
    return m


def aggregate(records, queries: Iterable[Query] | CorpusBundle, recall_ks: Sequence[int] = (1, 2, 4, 8)) -> MetricsReport:
    """Per-split (Text/Image/All) metrics; unanswered queries score zero."""
    records = list(records)
    if not records:
        raise ContractError("cannot aggregate an empty record list")
    if isinstance(queries, CorpusBundle):
        queries = queries.queries
    by_qid = {q.qid: q for q in queries}
    recall_ks = sorted(set(int(k) for k in recall_ks))
    items = {"Text": [], "Image": [], "All": []}
    for r in sorted(records, key=lambda r: r.qid):
        q = by_qid.get(r.qid)
        if q is None:
            raise IntegrityError(f"record for unknown query {r.qid!r}")
        pred = r.final_answer.text if r.final_answer is not None else ""
        items[SPLIT_OF[q.qtype]].append((q, r, pred))
        items["All"].append((q, r, pred))
    modes = sorted({r.mode for r in records})
    return MetricsReport({k: _split_metrics(v, recall_ks) for k, v in items.items()}, recall_ks, ",".join(modes))


def write_report(report: MetricsReport, path) -> None:
    atomic_write_text(path, dumps(report.to_dict()) + "\n")
