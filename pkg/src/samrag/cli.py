"""Command line entry point: ``samrag <command> ...``.

Every command writes its outputs atomically and exits 0 on success. Failures
print one JSON line ``{"error": <kind>, "message": <text>}`` to stderr; usage
problems (bad flags, missing input files, invalid config) exit 2, everything
else exits 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from .caption import CaptionCache, attach_cached_captions, caption_corpus
from .config import ConfigError, RunConfig, dump_config, load_config, make_backends, make_embedder
from .corpus import dump_documents, dump_queries, load_corpus, load_queries, validate
from .embed_index import build_index, load_index, save_index
from .errors import SamRagError
from .evalx import aggregate, write_report
from .orchestrator import Engine, Mode, read_trace, write_trace
from .trainprep import build_contrastive_dataset, build_distill_dataset, write_contrastive, write_distill
from .io import write_jsonl

log = logging.getLogger("samrag")

USAGE_EXIT = 2
FAILURE_EXIT = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "parallel", None) is not None:
        overrides["parallel"] = args.parallel
    if getattr(args, "recall_ks", None):
        overrides["recall_ks"] = args.recall_ks
    return load_config(_existing(args.config) if args.config else None, **overrides)


def _bundle(args, need_queries: bool = False):
    queries = getattr(args, "queries", None)
    if need_queries and not queries:
        raise UsageError("--queries is required")
    return load_corpus(_existing(args.corpus), _existing(queries) if queries else None)


def _index(args, bundle, embedder):
    if getattr(args, "index", None):
        return load_index(_existing(args.index), embedder)
    return build_index(bundle, embedder)


def _cache(args) -> CaptionCache:
    path = getattr(args, "captions", None)
    return CaptionCache.load(path) if path and Path(path).is_file() else CaptionCache()


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> None:
    bundle = load_corpus(_existing(args.corpus))
    if args.queries:
        bundle = bundle.with_queries(load_queries(_existing(args.queries)))
    report = validate(bundle)
    if not report.ok:
        for f in report.findings:
            print(f"{f.cls}\t{f.subject}\t{f.message}")
        raise SamRagError(f"{len(report.findings)} validation findings: {', '.join(report.classes())}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_documents(bundle, out / "documents.jsonl")
    dump_queries(bundle, out / "queries.jsonl")
    print(f"{len(bundle)} documents, {len(bundle.queries)} queries")


def cmd_caption(args) -> None:
    cfg = _config(args)
    bundle = load_corpus(_existing(args.corpus))
    backends = make_backends(cfg, args.backend or "")
    cache = _cache(args)
    bundle = caption_corpus(bundle, backends.vlm, cache, temperature=cfg.temperature_verification)
    dump_documents(bundle, args.out)
    if args.captions:
        cache.save(args.captions)
    print(f"captioned {sum(d.is_image for d in bundle.ordered_documents())} images")


def cmd_index(args) -> None:
    cfg = _config(args)
    bundle = load_corpus(_existing(args.corpus))
    if args.captions:
        bundle = attach_cached_captions(bundle, CaptionCache.load(_existing(args.captions)))
    index = build_index(bundle, make_embedder(cfg.backend_embedder))
    save_index(index, args.out)
    print(f"indexed {len(index)} documents with {index.embedder_id}")


def _engine(args):
    cfg = _config(args)
    bundle = _bundle(args, need_queries=True)
    backends = make_backends(cfg, args.backend or "")
    cache = _cache(args)
    bundle = attach_cached_captions(bundle, cache)
    return Engine(bundle, _index(args, bundle, backends.embedder), backends, cfg, cache), cache


def _finish_run(args, engine: Engine, cache: CaptionCache, records) -> None:
    write_trace(records, args.out)
    if args.captions:
        cache.save(args.captions)
    statuses = {}
    for r in records:
        statuses[r.answer_status] = statuses.get(r.answer_status, 0) + 1
    print(f"{len(records)} queries: " + ", ".join(f"{k}={v}" for k, v in sorted(statuses.items())))


def cmd_run(args) -> None:
    engine, cache = _engine(args)
    _finish_run(args, engine, cache, engine.run_suite(mode=Mode.SAM_RAG))


def cmd_baseline(args) -> None:
    engine, cache = _engine(args)
    k = args.k if args.k is not None else engine.cfg.top_k
    _finish_run(args, engine, cache, engine.run_suite(mode=Mode.CONVENTIONAL, k=k))


def cmd_eval(args) -> None:
    cfg = _config(args)
    records = read_trace(_existing(args.trace))
    queries = load_queries(_existing(args.queries))
    report = aggregate(records, queries, cfg.recall_ks)
    if args.out:
        write_report(report, args.out)
    print(report.render())


def cmd_prep_contrastive(args) -> None:
    cfg = _config(args)
    bundle = _bundle(args, need_queries=True)
    embedder = make_embedder(cfg.backend_embedder)
    data = build_contrastive_dataset(bundle, _index(args, bundle, embedder), embedder, cfg, random.Random(cfg.seed))
    write_contrastive(data.pairs, args.out)
    print(f"{len(data.pairs)} pairs, {len(data.skipped)} queries skipped")


def cmd_prep_distill(args) -> None:
    cfg = _config(args)
    bundle = _bundle(args, need_queries=True)
    backends = make_backends(cfg, args.backend or "")
    bundle = attach_cached_captions(bundle, _cache(args))
    data = build_distill_dataset(bundle, _index(args, bundle, backends.embedder), backends, cfg,
                                 random.Random(cfg.seed))
    write_distill(data.records, args.out)
    if args.log:
        write_jsonl(args.log, ({"task": r.task.value, "polarity": r.polarity.value, "qid": r.qid, "doc_id": r.doc_id,
                                "response": r.output_response, "answer": r.answer,
                                "retained": r in data.records} for r in data.log))
    for name, c in data.counts().items():
        print(f"{name}: {c['retained']}/{c['generated']}")


def cmd_config(args) -> None:
    sys.stdout.write(dump_config(_config(args)))


# ---------------------------------------------------------------- parser

def _ks(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--backend", help="backend spec for any role the config leaves unset")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="samrag", description="Adaptive multimodal retrieval-augmented QA pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="validate and normalise corpus and query files")
    s.add_argument("--corpus", required=True)
    s.add_argument("--queries")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("caption", parents=[common], help="raw-caption image documents")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="corpus file with raw captions attached")
    s.add_argument("--captions", help="caption cache file (read if present, then written)")
    s.set_defaults(func=cmd_caption)

    s = sub.add_parser("index", parents=[common], help="embed the corpus into an index file")
    s.add_argument("--corpus", required=True)
    s.add_argument("--captions", help="caption cache supplying raw captions")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    for name, func, help_text in (("run", cmd_run, "adaptive verified retrieval"),
                                  ("baseline", cmd_baseline, "fixed top-k retrieval")):
        s = sub.add_parser(name, parents=[common], help=help_text)
        s.add_argument("--corpus", required=True)
        s.add_argument("--queries", required=True)
        s.add_argument("--index")
        s.add_argument("--captions", help="caption cache file (read if present, then written)")
        s.add_argument("--parallel", type=int)
        s.add_argument("--out", required=True, help="trace file")
        if name == "baseline":
            s.add_argument("--k", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", parents=[common], help="metrics report from a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--recall-ks", type=_ks)
    s.add_argument("--out", help="report file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("prep-contrastive", parents=[common], help="hard-negative triplets for retriever tuning")
    s.add_argument("--corpus", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--index")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prep_contrastive)

    s = sub.add_parser("prep-distill", parents=[common], help="filtered instruction-tuning records")
    s.add_argument("--corpus", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--index")
    s.add_argument("--captions")
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="write every generated candidate with its retention flag")
    s.set_defaults(func=cmd_prep_distill)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.set_defaults(func=cmd_config)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), USAGE_EXIT)
    except ConfigError as exc:
        return _fail("config", str(exc), USAGE_EXIT)
    except SamRagError as exc:
        return _fail(type(exc).__name__, str(exc), FAILURE_EXIT)
    except OSError as exc:
        return _fail("io", str(exc), FAILURE_EXIT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
