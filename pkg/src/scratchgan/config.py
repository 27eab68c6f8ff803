"""Flat ``key = value`` run configuration with strict validation."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from importlib import resources
from typing import Iterable, get_type_hints

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    # data
    train_path: str = ""
    valid_path: str = ""
    embedding_path: str = ""
    embedding_dim: int = 16
    lowercase: bool = False
    max_vocab: int = 1000
    min_freq: int = 1
    min_tokens: int = 1
    max_tokens: int = 19
    max_len: int = 20
    # generator
    gen_hidden: int = 64
    gen_layers: int = 1
    gen_embed_dim: int = 16
    # discriminator
    disc_hidden: int = 64
    disc_layers: int = 1
    disc_embed_dim: int = 16
    positional: bool = True
    # adversarial training
    batch_size: int = 64
    gamma: float = 0.23
    gen_lr: float = 1e-3
    disc_lr: float = 1e-3
    disc_steps_per_gen_step: int = 1
    l2_weight: float = 1e-6
    dropout_rate: float = 0.1
    baseline_lambda: float = 0.08
    total_steps: int = 1000
    checkpoint_every: int = 100
    seed: int = 0
    fed_samples: int = 1000
    # maximum-likelihood baseline
    mle_hidden: int = 64
    mle_layers: int = 1
    mle_embed_dim: int = 16
    mle_dropout: float = 0.2
    mle_lr: float = 3e-3
    mle_batch_size: int = 64
    mle_steps: int = 1000
    mle_checkpoint_every: int = 100
    # n-gram baseline
    kn_order: int = 5
    kn_discount: float = 0.75
    # evaluation
    eval_samples: int = 1000
    bleu_order: int = 5
    lm_kind: str = "kn"
    lm_order: int = 3

    def validate(self) -> "RunConfig":
        positive = ["embedding_dim", "max_vocab", "min_freq", "min_tokens", "max_len", "gen_hidden",
                    "gen_layers", "gen_embed_dim", "disc_hidden", "disc_layers", "batch_size",
                    "disc_steps_per_gen_step", "checkpoint_every", "fed_samples", "mle_hidden",
                    "mle_layers", "mle_embed_dim", "mle_batch_size", "mle_checkpoint_every", "kn_order",
                    "eval_samples", "bleu_order", "lm_order"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ["total_steps", "mle_steps", "disc_embed_dim"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.max_vocab < 4:
            raise ConfigError("max_vocab must leave room for reserved tokens")
        if self.max_tokens < self.min_tokens:
            raise ConfigError("max_tokens must be >= min_tokens")
        for name in ["gamma", "baseline_lambda"]:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        for name in ["dropout_rate", "mle_dropout"]:
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        for name in ["gen_lr", "disc_lr", "mle_lr"]:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.l2_weight < 0:
            raise ConfigError("l2_weight must be >= 0")
        if not 0.0 < self.kn_discount < 1.0:
            raise ConfigError("kn_discount must be in (0, 1)")
        if self.lm_kind not in ("kn", "lstm"):
            raise ConfigError("lm_kind must be 'kn' or 'lstm'")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, gamma=self.gamma, gen_lr=self.gen_lr, disc_lr=self.disc_lr,
            disc_steps_per_gen_step=self.disc_steps_per_gen_step, l2_weight=self.l2_weight,
            dropout_rate=self.dropout_rate, baseline_lambda=self.baseline_lambda,
            total_steps=self.total_steps, checkpoint_every=self.checkpoint_every, seed=self.seed,
            max_len=self.max_len, fed_samples=self.fed_samples)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_HINTS = get_type_hints(RunConfig)


def _coerce(key: str, raw: str):
    kind = _HINTS[key]
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def parse_pairs(pairs: Iterable[tuple[str, str]], base: RunConfig | None = None) -> RunConfig:
    values = dataclasses.asdict(base or RunConfig())
    for key, raw in pairs:
        if key not in _HINTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values).validate()


def _split(line: str, where: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"{where}: expected key = value, got {line!r}")
    key, raw = line.split("=", 1)
    return key.strip(), raw.strip()


def parse_text(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    pairs = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(_split(line, f"{source}:{number}"))
    return parse_pairs(pairs, base)


def shipped_config(name: str) -> str:
    """Text of a config bundled with the package (``desk``, ``emnlp2017``, ``wikitext103``)."""
    return resources.files("scratchgan").joinpath("configs", f"{name}.cfg").read_text()


def load_config(path_or_name: str | None, overrides: Iterable[str] = ()) -> RunConfig:
    """Reads a config file (or shipped config by name) and applies ``key=value`` overrides.

    Relative data paths in a file are resolved against the file's directory.
    """
    if path_or_name is None:
        cfg = RunConfig().validate()
    elif os.path.isfile(path_or_name):
        with open(path_or_name, encoding="utf-8") as fh:
            cfg = parse_text(fh.read(), source=path_or_name)
        base = os.path.dirname(os.path.abspath(path_or_name))
        cfg = dataclasses.replace(cfg, **{
            k: os.path.join(base, getattr(cfg, k))
            for k in ("train_path", "valid_path", "embedding_path")
            if getattr(cfg, k) and not os.path.isabs(getattr(cfg, k))})
    else:
        try:
            text = shipped_config(path_or_name)
        except FileNotFoundError:
            raise ConfigError(f"no config file or shipped config named {path_or_name!r}") from None
        cfg = parse_text(text, source=path_or_name)
    return parse_pairs([_split(o, "--set") for o in overrides], cfg)
