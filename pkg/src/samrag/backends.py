"""Chat/vision model access.

Two backends share one interface (``chat(request) -> str``):

* ``LiveBackend`` speaks the OpenAI-compatible ``/chat/completions`` wire shape
  over HTTP with retries and a bounded number of in-flight requests.
* ``ScriptedBackend`` answers from a fixture table keyed by
  ``template_id,qid,doc_id[,step]`` taken from request metadata. It never looks
  at the prompt text, so tests stay independent of template wording.
"""

from __future__ import annotations

import base64
import json
import logging
import mimetypes
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .errors import BackendError, FixtureMissing, IntegrityError, RecordParseError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
ABSENT = "-"
WILDCARD = "*"


@dataclass(frozen=True)
class RequestMeta:
    """Structured identity of a request; the scripted backend keys on it."""

    template_id: str
    qid: str | None = None
    doc_id: str | None = None
    step: str | None = None
    repair: bool = False


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    images: tuple[str, ...] = ()


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    meta: RequestMeta
    model: str = ""
    temperature: float = 0.0
    max_tokens: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        if self.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")
        for m in self.messages:
            if m.role not in ROLES:
                raise ValueError(f"unknown role {m.role!r}")
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def single(cls, prompt: str, meta: RequestMeta, *, temperature: float = 0.0,
               images: Sequence[str] = (), model: str = "", max_tokens: int | None = None) -> "ChatRequest":
        return cls((Message("user", prompt, tuple(images)),), meta, model, temperature, max_tokens)


def image_url(ref: str) -> str:
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    path = Path(ref)
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return f"data:{mime};base64," + base64.b64encode(path.read_bytes()).decode("ascii")


def wire_body(req: ChatRequest, default_model: str = "") -> dict:
    messages = []
    for m in req.messages:
        if m.images:
            parts: list[dict] = [{"type": "text", "text": m.content}]
            parts += [{"type": "image_url", "image_url": {"url": image_url(r)}} for r in m.images]
            messages.append({"role": m.role, "content": parts})
        else:
            messages.append({"role": m.role, "content": m.content})
    body = {"model": req.model or default_model, "messages": messages, "temperature": req.temperature}
    if req.max_tokens is not None:
        body["max_tokens"] = req.max_tokens
    return body


class Backend:
    kind = "abstract"
    max_concurrency = 1

    def chat(self, req: ChatRequest) -> str:
        raise NotImplementedError


def chat(handle: Backend, req: ChatRequest) -> str:
    return handle.chat(req)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5
    factor: float = 2.0

    def delay(self, failure_no: int) -> float:
        return self.backoff * self.factor ** (failure_no - 1)


def _transient_status(status: int) -> bool:
    return status == 429 or status >= 500


class LiveBackend(Backend):
    kind = "live"

    def __init__(self, base_url: str, api_key: str = "", model: str = "", *,
                 timeout: float = 60.0, retry: RetryPolicy = RetryPolicy(), max_concurrency: int = 4,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retry = retry
        self.max_concurrency = max_concurrency
        self._limiter = threading.BoundedSemaphore(max_concurrency)
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.attempt_log: list[tuple[str, int, int | str]] = []
        self._log_lock = threading.Lock()

    @classmethod
    def from_env(cls, name: str, **kwargs) -> "LiveBackend":
        """Configure from ``SAMRAG_<NAME>_BASE_URL``, ``_API_KEY`` and ``_MODEL``."""
        prefix = f"SAMRAG_{name.upper()}_"
        base = os.environ.get(prefix + "BASE_URL")
        if not base:
            raise BackendError(f"environment variable {prefix}BASE_URL is not set", transient=False)
        return cls(base, os.environ.get(prefix + "API_KEY", ""), os.environ.get(prefix + "MODEL", ""), **kwargs)

    def _note(self, path: str, attempt: int, outcome) -> None:
        with self._log_lock:
            self.attempt_log.append((path, attempt, outcome))
        log.debug("POST %s attempt %d -> %s", path, attempt, outcome)

    def post_json(self, path: str, body: dict) -> dict:
        url = self.base_url + path
        last = ""
        last_status = None
        for attempt in range(1, self.retry.attempts + 1):
            with self._limiter:
                try:
                    resp = self._client.post(url, json=body)
                except httpx.TimeoutException as exc:
                    self._note(path, attempt, "timeout")
                    last, last_status = f"timeout: {exc}", None
                    resp = None
                except httpx.TransportError as exc:
                    self._note(path, attempt, "transport")
                    last, last_status = f"transport error: {exc}", None
                    resp = None
            if resp is not None:
                self._note(path, attempt, resp.status_code)
                if resp.is_success:
                    try:
                        return resp.json()
                    except json.JSONDecodeError:
                        raise BackendError(f"{url} returned non-JSON body", transient=False,
                                           attempts=attempt, status=resp.status_code) from None
                if not _transient_status(resp.status_code):
                    raise BackendError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}",
                                       transient=False, attempts=attempt, status=resp.status_code)
                last, last_status = f"HTTP {resp.status_code}", resp.status_code
            if attempt < self.retry.attempts:
                self._sleep(self.retry.delay(attempt))
        raise BackendError(f"{url} failed: {last}", transient=True, attempts=self.retry.attempts, status=last_status)

    def chat(self, req: ChatRequest) -> str:
        data = self.post_json("/chat/completions", wire_body(req, self.model))
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError("response has no choices[0].message.content", transient=False) from None
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        return content or ""

    def close(self) -> None:
        self._client.close()


def fixture_key(template_id: str, qid: str | None, doc_id: str | None, step: str | None = None) -> str:
    parts = [template_id, qid or ABSENT, doc_id or ABSENT]
    if step:
        parts.append(step)
    return ",".join(parts)


def candidate_keys(meta: RequestMeta) -> list[str]:
    """Lookup order, most specific first; repair requests fall back to the plain keys."""
    tids = [meta.template_id + ":repair", meta.template_id] if meta.repair else [meta.template_id]
    q, d = meta.qid or ABSENT, meta.doc_id or ABSENT
    keys = []
    for tid in tids:
        if meta.step:
            keys.append(fixture_key(tid, q, d, meta.step))
        keys += [fixture_key(tid, q, d), fixture_key(tid, q, WILDCARD), fixture_key(tid, WILDCARD, d),
                 fixture_key(tid, WILDCARD, WILDCARD)]
    return list(dict.fromkeys(keys))


class ScriptedBackend(Backend):
    """Deterministic backend: a fixture table and/or a responder callable.

    The responder, when given, is consulted first and may return ``None`` to
    defer to the table.
    """

    kind = "scripted"

    def __init__(self, fixtures: Mapping[str, str] | None = None,
                 responder: Callable[[RequestMeta], str | None] | None = None, max_concurrency: int = 8):
        self.fixtures = dict(fixtures or {})
        self.responder = responder
        self.max_concurrency = max_concurrency
        self._lock = threading.Lock()
        self.calls: list[tuple[RequestMeta, ChatRequest]] = []

    def lookup(self, meta: RequestMeta) -> str:
        if self.responder is not None:
            out = self.responder(meta)
            if out is not None:
                return out
        for key in candidate_keys(meta):
            if key in self.fixtures:
                return self.fixtures[key]
        raise FixtureMissing(fixture_key(meta.template_id, meta.qid, meta.doc_id, meta.step))

    def chat(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls.append((req.meta, req))
        return self.lookup(req.meta)

    def calls_for(self, template_id: str) -> list[ChatRequest]:
        with self._lock:
            return [r for m, r in self.calls if m.template_id == template_id]


def load_fixtures(path) -> dict[str, str]:
    path = Path(path)
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key, content = rec["key"], rec["content"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise RecordParseError(path, line_no, f"bad fixture line: {exc!r}") from None
            if not isinstance(key, str) or not isinstance(content, str):
                raise RecordParseError(path, line_no, "fixture key and content must be strings")
            if key in out:
                raise IntegrityError(f"duplicate fixture key {key!r} on line {line_no}")
            out[key] = content
    return out


@dataclass
class BackendSet:
    generator: Backend
    verifier: Backend
    vlm: Backend
    embedder: object = None

    @classmethod
    def uniform(cls, backend: Backend, embedder=None) -> "BackendSet":
        return cls(backend, backend, backend, embedder)
