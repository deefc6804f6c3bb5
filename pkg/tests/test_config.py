import pytest

from samrag.backends import LiveBackend, ScriptedBackend
from samrag.config import ConfigError, RunConfig, dump_config, load_config, make_backends, make_embedder, parse_config_text
from samrag.embed_index import HashEmbedder


def test_defaults():
    cfg = RunConfig()
    assert (cfg.batch_size, cfg.max_docs, cfg.top_k, cfg.recall_ks) == (4, 32, 8, (1, 2, 4, 8))
    assert cfg.temperature_verification == 0.0 and cfg.temperature_generation == 1.2


@pytest.mark.parametrize("bad", [dict(batch_size=0), dict(max_docs=2, batch_size=4), dict(recall_ks=(4, 2)),
                                 dict(recall_ks=(1, 1)), dict(tau=0), dict(max_regen=-1), dict(recall_ks=())])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad)


def test_file_parsing_aliases_and_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nbatch-size = 2\ntemperature.generation = 0.7  # inline\n"
                    "self_consistency.enabled = yes\nrecall_ks = 1, 3\n", encoding="utf-8")
    cfg = load_config(path, batch_size=3, seed=None)
    assert cfg.batch_size == 3
    assert cfg.temperature_generation == 0.7
    assert cfg.self_consistency_enabled is True
    assert cfg.recall_ks == (1, 3)


def test_dump_round_trips():
    cfg = RunConfig(batch_size=2, recall_ks=(1, 5), query_prefix="query: ", self_consistency_enabled=True)
    assert RunConfig(**parse_config_text(dump_config(cfg))) == cfg


@pytest.mark.parametrize("text", ["nonsense_key = 1", "batch_size = two", "just words", "self_consistency_enabled = maybe"])
def test_bad_config_text(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_backend_specs(tmp_path, monkeypatch):
    fx = tmp_path / "f.jsonl"
    fx.write_text('{"key": "qa,*,*", "content": "x"}\n')
    cfg = RunConfig(backend_generator=f"scripted:{fx}", backend_verifier=f"scripted:{fx}")
    s = make_backends(cfg, fallback=f"scripted:{fx}")
    assert isinstance(s.generator, ScriptedBackend) and s.generator is s.verifier is s.vlm
    assert isinstance(s.embedder, HashEmbedder)
    with pytest.raises(ConfigError):
        make_backends(RunConfig())
    with pytest.raises(ConfigError):
        make_backends(RunConfig(backend_generator="carrier-pigeon:x", backend_verifier="x", backend_vlm="x"))
    monkeypatch.setenv("SAMRAG_EMB_BASE_URL", "http://e/v1")
    live = make_embedder("live:EMB:bge:768")
    assert live.dimension == 768 and isinstance(live.backend, LiveBackend)
    assert make_embedder("hash:32").dimension == 32


def test_quoted_strings_keep_whitespace_and_hashes():
    out = parse_config_text('query_prefix = "query: "  # bge style\ntemplate_dir = "a#b"\n')
    assert out == {"query_prefix": "query: ", "template_dir": "a#b"}
    with pytest.raises(ConfigError):
        parse_config_text('query_prefix = "unterminated')
