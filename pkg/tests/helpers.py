"""Shared builders for scripted test worlds."""

from __future__ import annotations

import json
import random
from functools import lru_cache

import numpy as np

from samrag.backends import BackendSet, ScriptedBackend
from samrag.config import RunConfig
from samrag.corpus import CorpusBundle, Document, Modality, QType, Query
from samrag.embed_index import VectorIndex
from samrag.orchestrator import Engine
from samrag.verify import PromptTemplate, TemplateSet

MINIMAL_TEMPLATES = TemplateSet({
    "isRel": PromptTemplate("isRel", "R {Content}|{Title}|{Question}"),
    "isUse": PromptTemplate("isUse", "U {Content}|{Question}|{Answer}"),
    "isSup": PromptTemplate("isSup", "S {Content}|{Question}|{Answer}"),
    "qa": PromptTemplate("qa", "Q {Content}|{Question}"),
    "image_inference": PromptTemplate("image_inference", "I {Title}|{Question}"),
    "raw_caption": PromptTemplate("raw_caption", "C {Title}"),
})


@lru_cache(maxsize=4096)
def reply(response: str, reasoning: str = "r") -> str:
    return json.dumps({"Reasoning": reasoning, "Response": response})


def text_doc(doc_id: str, body: str = "", title: str = "") -> Document:
    return Document(doc_id, Modality.TEXT, title or doc_id, body or f"body of {doc_id}")


def image_doc(doc_id: str, title: str = "", caption: str | None = None) -> Document:
    return Document(doc_id, Modality.IMAGE, title or doc_id, None, f"images/{doc_id}.jpg",
                    caption if caption is not None else f"raw caption of {doc_id}")


class FixedEmbedder:
    """Maps known strings to fixed vectors; anything else embeds to zero."""

    def __init__(self, dimension: int, table: dict[str, np.ndarray], embedder_id: str = "fixed"):
        self.dimension = dimension
        self.table = table
        self.embedder_id = embedder_id

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self.table.get(text, np.zeros(self.dimension)), dtype=np.float64)


def ranked_world(doc_ids, questions):
    """An index and embedder under which every question ranks ``doc_ids`` in the given order."""
    n = len(doc_ids)
    matrix = np.eye(n)
    qvec = np.arange(n, 0, -1, dtype=np.float64)
    qvec /= np.linalg.norm(qvec)
    embedder = FixedEmbedder(n, {q: qvec for q in questions})
    return VectorIndex("fixed", n, tuple(doc_ids), matrix), embedder


class Script:
    """Responder scripting verdicts by doc id (isRel), step (isUse) and round (isSup).

    ``use`` maps "round.attempt" to a value (default True); ``sup`` maps the
    round number to a value; ``answers`` maps qid to the drafted answer text.
    """

    def __init__(self, rel=None, use=None, sup=None, answers=None, default_rel=False):
        self.rel = dict(rel or {})
        self.use = dict(use or {})
        self.sup = dict(sup or {})
        self.answers = dict(answers or {})
        self.default_rel = default_rel

    def __call__(self, meta):
        tid = meta.template_id
        if tid == "isRel":
            return reply(str(self.rel.get(meta.doc_id, self.default_rel)))
        if tid == "isUse":
            return reply(str(self.use.get(meta.step, True)))
        if tid == "isSup":
            return reply(str(self.sup.get(int(meta.step), True)))
        if tid == "qa":
            return reply(self.answers.get(meta.qid, f"answer {meta.step}"))
        if tid == "image_inference":
            return reply("True", f"specific caption of {meta.doc_id} for {meta.qid}")
        if tid == "raw_caption":
            return f"raw caption of {meta.doc_id}"
        return None


def scripted_engine(doc_ids, script, cfg=None, queries=None, images=()):
    docs = [image_doc(d) if d in images else text_doc(d) for d in doc_ids]
    queries = list(queries or [Query("q1", "question one?", ("answer",), (doc_ids[0],))])
    bundle = CorpusBundle.from_lists(docs, queries)
    index, embedder = ranked_world(doc_ids, [q.question for q in queries])
    backend = ScriptedBackend(responder=script)
    engine = Engine(bundle, index, BackendSet.uniform(backend, embedder), cfg or RunConfig(), templates=MINIMAL_TEMPLATES)
    return engine, backend


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


# ---------------------------------------------------------------- distillation micro-world

GARBAGE = "I would rather not answer in that format."
VOCAB = ("river mountain harbour castle meadow engine violin comet glacier lantern orchard canyon "
         "falcon quartz beacon tundra bazaar ferry citadel delta marble prairie summit tapestry").split()


def teacher_says(tid, qid, doc_id, step, gold_ids):
    """What the scripted teacher answers; ``None`` means an unparseable reply."""
    rng = random.Random(f"{tid}|{qid}|{doc_id}|{step}")
    r = rng.random()
    if tid == "image_inference":
        return ("True" if r < 0.7 else "False"), f"caption of {doc_id} for {qid}"
    if tid == "qa":
        gold = f"answer {qid}"
        return ("", gold if r < 0.6 else f"wrong {qid}")
    if tid == "isRel":
        p = 0.8 if doc_id in gold_ids else 0.3
        return ("True" if r < p else "False"), "rel"
    if tid == "isUse":
        if r < 0.1:
            return None
        return ("True" if r < 0.55 else "False"), "use"
    if tid == "isSup":
        return (("True", "Partial", "False")[int(r * 3)]), "sup"
    raise KeyError(tid)


def distill_world(n_queries=30, seed=11):
    rng = random.Random(seed)
    docs = []
    for i in range(40):
        words = " ".join(rng.choice(VOCAB) for _ in range(8))
        if i % 4 == 3:
            docs.append(image_doc(f"m{i}", f"picture {i}", f"a picture of {words}"))
        else:
            docs.append(text_doc(f"t{i}", f"{words} entry {i}", f"entry {i}"))
    queries = []
    for i in range(n_queries):
        qid = f"q{i:02d}"
        if i == n_queries - 1:
            queries.append(Query(qid, "question without support?", (f"answer {qid}",), ()))
            continue
        gold = rng.sample(docs, 2 if i % 5 == 0 else 1)
        words = " ".join(rng.choice(VOCAB) for _ in range(3))
        qtype = QType.IMAGE if any(d.is_image for d in gold) else QType.TEXT
        queries.append(Query(qid, f"what about {words}?", (f"answer {qid}",), tuple(d.id for d in gold), qtype))
    bundle = CorpusBundle.from_lists(docs, queries)
    gold_of = {q.qid: set(q.gold_support_ids) for q in queries}

    def responder(meta):
        said = teacher_says(meta.template_id, meta.qid, meta.doc_id, meta.step, gold_of.get(meta.qid, set()))
        if said is None:
            return GARBAGE
        response, reasoning = said if meta.template_id != "qa" else (said[1], said[0])
        return reply(response, reasoning)

    return bundle, responder
