"""Adaptive multimodal retrieval-augmented question answering with staged verification."""

from .backends import BackendSet, LiveBackend, ScriptedBackend
from .config import RunConfig, load_config
from .corpus import CorpusBundle, Document, Query, load_corpus
from .embed_index import HashEmbedder, build_index, score_all
from .orchestrator import Engine, Mode, RunRecord, Status

__all__ = [
    "BackendSet", "CorpusBundle", "Document", "Engine", "HashEmbedder", "LiveBackend", "Mode", "Query",
    "RunConfig", "RunRecord", "ScriptedBackend", "Status", "build_index", "load_config", "load_corpus",
    "score_all",
]
__version__ = "0.1.0"
