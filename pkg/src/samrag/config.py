"""Run configuration.

Config files are flat ``key = value`` lines (``#`` starts a comment). Dotted
keys are accepted as aliases, so ``temperature.generation`` and
``temperature_generation`` name the same field. Precedence is
flag > file > default.

String values may be JSON-quoted to keep surrounding whitespace or ``#``
(``query_prefix = "query: "``).

Backend specs:

* ``scripted:<fixture file>`` -- deterministic fixture backend
* ``live:<NAME>`` -- OpenAI-compatible endpoint from ``SAMRAG_<NAME>_*`` env vars
* embedder: ``hash`` or ``hash:<dim>``, or ``live:<NAME>:<model>:<dim>``
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .backends import BackendSet, LiveBackend, ScriptedBackend, load_fixtures
from .embed_index import HashEmbedder, LiveEmbedder
from .errors import SamRagError


class ConfigError(SamRagError, ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    batch_size: int = 4
    max_docs: int = 32
    max_regen: int = 2
    self_consistency_enabled: bool = False
    self_consistency_n: int = 5
    temperature_generation: float = 1.2
    temperature_verification: float = 0.0
    top_k: int = 8
    recall_ks: tuple[int, ...] = (1, 2, 4, 8)
    ranking_depth: int = 100
    query_prefix: str = ""
    backend_generator: str = ""
    backend_verifier: str = ""
    backend_vlm: str = ""
    backend_embedder: str = "hash:256"
    template_dir: str = ""
    seed: int = 0
    parallel: int = 1
    tau: float = 0.05
    neg_samples: int = 10
    neg_window: int = 50
    distill_neg_window: int = 10

    def __post_init__(self):
        for name in ("batch_size", "max_docs", "self_consistency_n", "top_k", "ranking_depth", "parallel",
                     "neg_samples", "neg_window", "distill_neg_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_regen < 0:
            raise ConfigError("max_regen must be >= 0")
        if self.max_docs < self.batch_size:
            raise ConfigError("max_docs must be >= batch_size")
        if self.temperature_generation < 0 or self.temperature_verification < 0:
            raise ConfigError("temperatures must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        ks = tuple(self.recall_ks)
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(set(ks)):
            raise ConfigError("recall_ks must be positive, distinct and ascending")
        object.__setattr__(self, "recall_ks", ks)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_HINTS = typing.get_type_hints(RunConfig)
FIELD_NAMES = {f.name for f in fields(RunConfig)}


def _coerce(name: str, value):
    hint = _HINTS[name]
    if not isinstance(value, str):
        return tuple(value) if hint == tuple[int, ...] else value
    text = value.strip()
    try:
        if hint is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("true", "1", "yes", "on")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint == tuple[int, ...]:
            return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return text


def canonical_key(key: str) -> str:
    name = key.strip().replace(".", "_").replace("-", "_")
    if name not in FIELD_NAMES:
        raise ConfigError(f"unknown config key {key!r}")
    return name


def _value_text(raw: str, line_no: int):
    raw = raw.strip()
    if raw.startswith('"'):
        try:
            value, end = json.JSONDecoder().raw_decode(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"config line {line_no}: bad quoted value") from None
        rest = raw[end:].strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"config line {line_no}: trailing text after quoted value")
        return value, True
    return raw.split("#", 1)[0].strip(), False


def parse_config_text(text: str) -> dict:
    out = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.split("#", 1)[0].strip():
            continue
        if "=" not in line.split("#", 1)[0]:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, raw = line.split("=", 1)
        name = canonical_key(key)
        value, quoted = _value_text(raw, line_no)
        out[name] = value if quoted and _HINTS[name] is str else _coerce(name, value)
    return out


def load_config(path=None, **overrides) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    for key, value in overrides.items():
        if value is not None:
            name = canonical_key(key)
            values[name] = _coerce(name, value)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, str):
            v = json.dumps(v, ensure_ascii=False)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def make_backend(spec: str, cache: dict | None = None):
    cache = {} if cache is None else cache
    if spec in cache:
        return cache[spec]
    kind, _, rest = spec.partition(":")
    if kind == "scripted" and rest:
        backend = ScriptedBackend(load_fixtures(rest))
    elif kind == "live" and rest:
        backend = LiveBackend.from_env(rest)
    else:
        raise ConfigError(f"bad backend spec {spec!r}; expected scripted:<file> or live:<NAME>")
    cache[spec] = backend
    return backend


def make_embedder(spec: str, cache: dict | None = None):
    kind, _, rest = spec.partition(":")
    if kind == "hash":
        return HashEmbedder(int(rest) if rest else 256)
    if kind == "live":
        parts = rest.split(":")
        if len(parts) != 3:
            raise ConfigError("live embedder spec is live:<NAME>:<model>:<dim>")
        name, model, dim = parts
        key = f"live:{name}"
        cache = {} if cache is None else cache
        backend = cache.get(key) or LiveBackend.from_env(name)
        cache[key] = backend
        return LiveEmbedder(backend, model, int(dim))
    raise ConfigError(f"bad embedder spec {spec!r}")


def make_backends(cfg: RunConfig, fallback: str = "") -> BackendSet:
    """Instantiate role backends; roles naming the same spec share one instance."""
    cache: dict = {}
    specs = {}
    for role in ("generator", "verifier", "vlm"):
        spec = getattr(cfg, f"backend_{role}") or fallback
        if not spec:
            raise ConfigError(f"no backend configured for role {role!r}")
        specs[role] = make_backend(spec, cache)
    return BackendSet(specs["generator"], specs["verifier"], specs["vlm"], make_embedder(cfg.backend_embedder, cache))
