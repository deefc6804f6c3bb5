"""Shared setup for the desk-scale experiment scripts."""

from __future__ import annotations

from pathlib import Path

from samrag.caption import CaptionCache, caption_corpus
from samrag.config import RunConfig, load_config, make_backends
from samrag.corpus import load_corpus
from samrag.embed_index import build_index
from samrag.orchestrator import Engine

DESK = Path(__file__).resolve().parents[1] / "data" / "desk"


def add_common(parser):
    parser.add_argument("--corpus", default=str(DESK / "documents.jsonl"))
    parser.add_argument("--queries", default=str(DESK / "queries.jsonl"))
    parser.add_argument("--config", default=str(DESK / "desk.cfg"))
    parser.add_argument("--backend", default=f"scripted:{DESK / 'fixtures.jsonl'}",
                        help="backend spec used for every role (scripted:<file> or live:<NAME>)")


def engine_from_args(args, **overrides) -> Engine:
    cfg: RunConfig = load_config(args.config, **overrides)
    backends = make_backends(cfg, args.backend)
    cache = CaptionCache()
    bundle = load_corpus(args.corpus, args.queries)
    bundle = caption_corpus(bundle, backends.vlm, cache, temperature=cfg.temperature_verification)
    return Engine(bundle, build_index(bundle, backends.embedder), backends, cfg, cache)
