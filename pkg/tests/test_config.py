import dataclasses

import pytest

from scratchgan.config import ConfigError, RunConfig, load_config, parse_text


@pytest.mark.parametrize("name", ["desk", "emnlp2017", "wikitext103"])
def test_shipped_configs_load(name):
    cfg = load_config(name)
    assert cfg == cfg.validate()
    assert parse_text(cfg.dumps()) == cfg


def test_emnlp_values():
    cfg = load_config("emnlp2017")
    assert (cfg.batch_size, cfg.gamma, cfg.gen_lr, cfg.disc_lr) == (512, 0.23, 9.59e-5, 9.38e-3)
    assert (cfg.dropout_rate, cfg.baseline_lambda, cfg.max_vocab, cfg.max_len) == (0.1, 0.08, 6000, 50)
    assert (cfg.gen_hidden, cfg.gen_layers, cfg.disc_hidden, cfg.embedding_dim) == (512, 2, 512, 300)


def test_wikitext_values():
    cfg = load_config("wikitext103")
    assert (cfg.batch_size, cfg.gamma, cfg.gen_lr, cfg.disc_lr) == (768, 0.79, 1.67e-4, 2.98e-3)
    assert (cfg.dropout_rate, cfg.baseline_lambda, cfg.max_vocab) == (0.4, 0.23, 20003)


def test_desk_budget():
    cfg = load_config("desk")
    assert cfg.max_vocab <= 1000 and cfg.max_len == 20 and cfg.batch_size == 64


def test_overrides_and_unknown_keys():
    cfg = load_config("desk", ["seed=7", "positional=false", "gen_lr=0.5"])
    assert (cfg.seed, cfg.positional, cfg.gen_lr) == (7, False, 0.5)
    with pytest.raises(ConfigError, match="unknown"):
        load_config("desk", ["nonsense=1"])
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config("desk", ["seed=abc"])
    with pytest.raises(ConfigError):
        load_config("desk", ["seed"])
    with pytest.raises(ConfigError):
        load_config("no-such-config")


@pytest.mark.parametrize("change", [{"gamma": 1.5}, {"batch_size": 0}, {"gen_lr": 0.0}, {"dropout_rate": 1.0},
                                    {"lm_kind": "rnn"}, {"kn_discount": 1.0}, {"max_tokens": 0, "min_tokens": 1},
                                    {"max_vocab": 3}, {"l2_weight": -1.0}])
def test_validation_rejects(change):
    with pytest.raises(ConfigError):
        dataclasses.replace(RunConfig(), **change).validate()


def test_file_paths_resolve_against_config_directory(tmp_path):
    (tmp_path / "run.cfg").write_text("# comment\ntrain_path = data/t.txt  # trailing\nseed = 3\n")
    cfg = load_config(str(tmp_path / "run.cfg"))
    assert cfg.train_path == str(tmp_path / "data" / "t.txt") and cfg.seed == 3


def test_digest_tracks_content():
    a = RunConfig()
    assert a.digest() == RunConfig().digest()
    assert a.digest() != a.replace(seed=1).digest()
    with pytest.raises(ConfigError, match="line|expected"):
        parse_text("just words\n")


def test_shipped_name_wins_over_a_directory(tmp_path, monkeypatch):
    (tmp_path / "desk").mkdir()
    monkeypatch.chdir(tmp_path)
    assert load_config("desk") == load_config("desk", [])
    assert load_config("desk").max_len == 20
