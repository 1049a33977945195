import pytest

from marblevad.config import (ConfigError, RunConfig, config_text, flatten,
                              load_run_config, parse_config_text, parse_value,
                              set_key)


def load_text(tmp_path, text, **kw):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return load_run_config(path, **kw)


# ---- parsing ----

def test_parse_value_json_and_bare_words():
    assert parse_value("7") == 7
    assert parse_value("0.25") == 0.25
    assert parse_value("true") is True
    assert parse_value("[13, 15, 17]") == [13, 15, 17]
    assert parse_value('"mfcc"') == "mfcc"
    assert parse_value("mfcc") == "mfcc"  # bare word falls back to string


def test_parse_config_text():
    items = parse_config_text(
        "# comment\n"
        "seed = 7\n"
        "\n"
        "features.kind = log_mel  # trailing comment\n"
        "model.block_kernels = [13, 15, 17]\n")
    assert items == {"seed": 7, "features.kind": "log_mel",
                     "model.block_kernels": [13, 15, 17]}


def test_parse_config_text_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("seed = 1\nnot an assignment\n")
    with pytest.raises(ConfigError, match="empty key"):
        parse_config_text("= 3\n")


# ---- key assignment and coercion ----

def test_set_key_nested():
    cfg = RunConfig()
    set_key(cfg, "train.epochs", 10)
    set_key(cfg, "train.augment.noise_db", [-80, -50])
    set_key(cfg, "features.kind", "mfcc")
    assert cfg.train.epochs == 10
    assert cfg.train.augment.noise_db == (-80, -50)
    assert cfg.features.kind == "mfcc"


def test_set_key_rejects_unknown_and_sections():
    cfg = RunConfig()
    with pytest.raises(ConfigError, match="unknown config key"):
        set_key(cfg, "train.banana", 1)
    with pytest.raises(ConfigError, match="unknown config key"):
        set_key(cfg, "nope.epochs", 1)
    with pytest.raises(ConfigError, match="section, not a value"):
        set_key(cfg, "train.augment", 1)


def test_coercion_rules():
    cfg = RunConfig()
    set_key(cfg, "train.epochs", 5.0)  # integral float narrows
    assert cfg.train.epochs == 5
    set_key(cfg, "train.max_lr", 1)    # int widens to float
    assert cfg.train.max_lr == 1.0
    set_key(cfg, "train.augment_enabled", "false")
    assert cfg.train.augment_enabled is False
    with pytest.raises(ConfigError):
        set_key(cfg, "train.epochs", 5.5)
    with pytest.raises(ConfigError):
        set_key(cfg, "train.epochs", True)  # bool is not an integer here
    with pytest.raises(ConfigError):
        set_key(cfg, "train.augment_enabled", 1)
    with pytest.raises(ConfigError):
        set_key(cfg, "features.kind", 3)
    with pytest.raises(ConfigError):
        set_key(cfg, "model.block_kernels", 13)


# ---- file loading and validation ----

def test_load_run_config_defaults():
    cfg = load_run_config()
    assert cfg.seed == 0
    assert cfg.train.epochs == 150
    assert cfg.infer.overlap == 0.875
    assert cfg.eval.target_fpr == 0.315


def test_load_run_config_file_and_overrides(tmp_path):
    cfg = load_text(tmp_path,
                    "seed = 3\ntrain.epochs = 12\nfeatures.kind = mfcc\n",
                    overrides={"train.epochs": 20})
    assert cfg.seed == 3
    assert cfg.train.epochs == 20  # override beats the file
    assert cfg.features.kind == "mfcc"


def test_load_run_config_validates(tmp_path):
    with pytest.raises(ConfigError):
        load_text(tmp_path, "data.train_ratio = 0.9\n")  # ratios sum to 1.1
    with pytest.raises(ConfigError):
        load_text(tmp_path, "infer.overlap = 1.0\n")
    with pytest.raises(ConfigError):
        load_text(tmp_path, "infer.filter = gaussian\n")
    with pytest.raises(ConfigError):
        load_text(tmp_path, "model.prologue_kernel = 10\n")
    with pytest.raises(ConfigError):
        load_text(tmp_path, "eval.target_fpr = 1.5\n")


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("VAD_SEED", "42")
    assert load_run_config().seed == 42
    assert load_text(tmp_path, "seed = 3\n").seed == 3  # file beats env
    assert load_text(tmp_path, "seed = 3\n", seed_flag=9).seed == 9
    assert load_run_config(overrides={"seed": 5}).seed == 5
    monkeypatch.setenv("VAD_SEED", "abc")
    with pytest.raises(ConfigError):
        load_run_config()


def test_env_seed_ignored_when_unset(tmp_path, monkeypatch):
    monkeypatch.delenv("VAD_SEED", raising=False)
    assert load_run_config().seed == 0


# ---- rendering ----

def test_flatten_has_expected_keys():
    keys = flatten(RunConfig())
    for expected in ("seed", "data.stride_s", "features.n_mels",
                     "model.block_kernels", "train.augment.p_wave_augment",
                     "infer.filter", "eval.target_fpr"):
        assert expected in keys


def test_config_text_round_trips(tmp_path):
    cfg = RunConfig()
    cfg.seed = 11
    cfg.train.epochs = 33
    cfg.features.kind = "mfcc"
    cfg.train.augment_enabled = False
    text = config_text(cfg)
    again = load_text(tmp_path, text)
    assert flatten(again) == flatten(cfg)
