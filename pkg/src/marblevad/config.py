"""Run configuration: flat dotted keys in a plain text file.

One `section.field = value` assignment per line, `#` comments, values in
JSON syntax (bare words read as strings). Flags override file values, and
the seed falls back to the VAD_SEED environment variable.

    seed = 7
    features.kind = mfcc
    model.block_kernels = [13, 15, 17]
    train.epochs = 50
    train.augment.noise_db = [-90, -46]
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .features import FeatureConfig
from .marblenet import MarbleNetConfig
from .training import TrainConfig

FILTERS = ("median", "mean", "none")
APPROACHES = ("sliding", "shift")


class ConfigError(Exception):
    """A config file or override failed to parse or validate."""


@dataclass
class DataConfig:
    seg_len_s: float = 0.63
    stride_s: float = 0.15
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    sample_rate: int = 16000

    @property
    def ratios(self):
        return (self.train_ratio, self.val_ratio, self.test_ratio)


@dataclass
class InferConfig:
    seg_len_s: float = 0.63
    overlap: float = 0.875
    filter: str = "median"
    approach: str = "sliding"
    min_duration_s: float = 0.0

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}")
        if self.approach not in APPROACHES:
            raise ValueError(f"approach must be one of {APPROACHES}")


@dataclass
class EvalConfig:
    target_fpr: float = 0.315


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: MarbleNetConfig = field(default_factory=MarbleNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def parse_value(text):
    """JSON scalar/list if it parses, else the bare string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text, source="<config>"):
    """Dotted-key assignments -> ordered {key: value} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = parse_value(value.strip())
    return out


def load_config_file(path):
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), source=path)


def _coerce(key, value, current):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value == int(value):
            return int(value)
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(current, tuple):
        if isinstance(value, (list, tuple)):
            return tuple(value)
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    if isinstance(current, str) or current is None:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    raise ConfigError(f"{key}: cannot assign {value!r}")


def set_key(cfg, key, value):
    """Assign one dotted key into the nested config dataclasses."""
    parts = key.split(".")
    obj = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or \
                part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or \
            leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {key!r}")
    if dataclasses.is_dataclass(getattr(obj, leaf)):
        raise ConfigError(f"{key!r} is a section, not a value")
    setattr(obj, leaf, _coerce(key, value, getattr(obj, leaf)))


def apply_keys(cfg, items):
    for key, value in items.items():
        set_key(cfg, key, value)


def _validate(cfg):
    try:
        cfg.model.__post_init__()
        cfg.infer.__post_init__()
        if abs(sum(cfg.data.ratios) - 1.0) > 1e-9:
            raise ValueError("data split ratios must sum to 1")
        if not 0.0 <= cfg.infer.overlap < 1.0:
            raise ValueError("infer.overlap must be in [0, 1)")
        if not 0.0 <= cfg.eval.target_fpr <= 1.0:
            raise ValueError("eval.target_fpr must be in [0, 1]")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path=None, overrides=None, seed_flag=None):
    """Defaults <- config file <- overrides <- seed precedence chain.

    Seed precedence: --seed flag, then file/override value, then the
    VAD_SEED environment variable, then 0.
    """
    cfg = RunConfig()
    seeded = False
    if path is not None:
        items = load_config_file(path)
        seeded = seeded or "seed" in items
        apply_keys(cfg, items)
    if overrides:
        seeded = seeded or "seed" in overrides
        apply_keys(cfg, overrides)
    if seed_flag is not None:
        cfg.seed = int(seed_flag)
    elif not seeded and os.environ.get("VAD_SEED"):
        try:
            cfg.seed = int(os.environ["VAD_SEED"])
        except ValueError as exc:
            raise ConfigError(f"VAD_SEED must be an integer: {exc}") from exc
    _validate(cfg)
    return cfg


def flatten(cfg, prefix=""):
    """Nested dataclasses -> ordered {dotted key: value} dict."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def config_text(cfg):
    """Render a config as parseable dotted-key lines."""
    lines = []
    for key, value in flatten(cfg).items():
        if isinstance(value, tuple):
            shown = json.dumps(list(value))
        elif isinstance(value, bool):
            shown = "true" if value else "false"
        elif value is None:
            shown = '""'
        else:
            shown = json.dumps(value)
        lines.append(f"{key} = {shown}")
    return "\n".join(lines) + "\n"
