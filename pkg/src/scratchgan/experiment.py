"""Wiring shared by the CLI, the scripts and the acceptance tests: data
loading, model construction, validation FED and complete training runs."""

from __future__ import annotations

import copy
import dataclasses
import logging
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .corpus import (
    Vocabulary,
    build_vocab,
    encode_corpus,
    filter_by_length,
    load_embedding_file,
    read_corpus,
)
from .discriminator import init_discriminator
from .generator import GeneratorParams, SamplerConfig, init_generator, sample_batch
from .metrics import MeanWordEmbedder, fed
from .trainer import GanState, train_loop

log = logging.getLogger(__name__)


@dataclasses.dataclass
class Dataset:
    vocab: Vocabulary
    train: list[list[str]]
    valid: list[list[str]]
    train_ids: np.ndarray
    valid_ids: np.ndarray
    pretrained: np.ndarray
    coverage: float
    embedder: MeanWordEmbedder

    def __post_init__(self):
        self._valid_cache: dict[int, np.ndarray] = {}

    def valid_embeddings(self, n: int) -> np.ndarray:
        if n not in self._valid_cache:
            self._valid_cache[n] = self.embedder(self.valid[:n])
        return self._valid_cache[n]


def prepare_data(cfg: RunConfig, train: Sequence[Sequence[str]] | None = None,
                 valid: Sequence[Sequence[str]] | None = None) -> Dataset:
    if train is None:
        train = read_corpus(cfg.train_path, cfg.lowercase)
    if valid is None:
        valid = read_corpus(cfg.valid_path, cfg.lowercase)
    train = filter_by_length(train, cfg.min_tokens, cfg.max_tokens)
    valid = filter_by_length(valid, cfg.min_tokens, cfg.max_tokens)
    vocab = build_vocab(train, cfg.max_vocab, cfg.min_freq)
    pretrained, coverage = load_embedding_file(cfg.embedding_path or None, vocab, cfg.embedding_dim,
                                               seed=cfg.seed)
    name = "file" if cfg.embedding_path else f"random-seed{cfg.seed}"
    return Dataset(vocab, [list(s) for s in train], [list(s) for s in valid],
                   encode_corpus(vocab, train, cfg.max_len), encode_corpus(vocab, valid, cfg.max_len),
                   pretrained, coverage, MeanWordEmbedder(vocab, pretrained, name))


def build_gan(cfg: RunConfig, data: Dataset) -> GanState:
    rng = np.random.default_rng(cfg.seed)
    gen = init_generator(data.pretrained, cfg.gen_embed_dim, cfg.gen_hidden, cfg.gen_layers, rng)
    disc = init_discriminator(data.pretrained, cfg.disc_embed_dim, cfg.disc_hidden, cfg.disc_layers, rng,
                              max_len=cfg.max_len, positional=cfg.positional, dropout_rate=cfg.dropout_rate)
    return GanState.create(gen, disc, cfg.train_config())


def sample_sentences(gen: GeneratorParams, vocab: Vocabulary, n: int, max_len: int,
                     temperature: float = 1.0, seed: int = 0, chunk: int = 1000) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    out: list[list[str]] = []
    cfg = SamplerConfig(temperature, max_len, seed)
    while len(out) < n:
        traj = sample_batch(gen, cfg, min(chunk, n - len(out)), rng=rng)
        out.extend(vocab.detokenize(row) for row in traj.tokens)
    return out


def validation_fed(gen: GeneratorParams, data: Dataset, n: int, max_len: int, seed: int = 1234) -> float:
    n = min(n, len(data.valid))
    samples = sample_sentences(gen, data.vocab, n, max_len, seed=seed)
    return fed(data.embedder(samples), data.valid_embeddings(n))


@dataclasses.dataclass
class GanResult:
    best_step: int
    best_fed: float
    history: list[tuple[int, float]]
    initial_fed: float
    best_gen: GeneratorParams
    state: GanState
    metrics: list[dict]


def run_gan(cfg: RunConfig, data: Dataset,
            on_checkpoint: Callable[[GanState, float], None] | None = None,
            on_metrics: Callable[[dict], None] | None = None) -> GanResult:
    """Trains from scratch and keeps an in-memory copy of the best-FED generator."""
    state = build_gan(cfg, data)
    tcfg = cfg.train_config()
    initial = validation_fed(state.gen, data, cfg.fed_samples, cfg.max_len)
    best = {"fed": np.inf, "gen": copy.deepcopy(state.gen)}
    metrics: list[dict] = []

    def checkpoint(st: GanState, score: float) -> None:
        if score < best["fed"]:
            best["fed"] = score
            best["gen"] = copy.deepcopy(st.gen)
        if on_checkpoint:
            on_checkpoint(st, score)

    def record(m: dict) -> None:
        metrics.append(m)
        if on_metrics:
            on_metrics(m)

    best_step, best_fed, history = train_loop(
        state, data.train_ids, tcfg,
        evaluate=lambda st: validation_fed(st.gen, data, cfg.fed_samples, cfg.max_len),
        on_checkpoint=checkpoint, on_metrics=record)
    return GanResult(best_step, best_fed, history, initial, best["gen"], state, metrics)


def length_histogram(sentences: Sequence[Sequence[str]], max_len: int) -> np.ndarray:
    """Normalized histogram of token counts over 0..max_len."""
    counts = np.bincount([min(len(s), max_len) for s in sentences], minlength=max_len + 1)
    return counts / max(counts.sum(), 1)


def length_l1(samples: Sequence[Sequence[str]], reference: Sequence[Sequence[str]], max_len: int) -> float:
    return float(np.abs(length_histogram(samples, max_len) - length_histogram(reference, max_len)).sum())


def fed_by_length(sentences: Sequence[Sequence[str]], reference: Sequence[Sequence[str]], embedder,
                  bins: Sequence[tuple[int, int]], min_count: int = 50) -> list[dict]:
    """FED of length-restricted subsets of `sentences` against the full
    reference set; exposes how strongly the score tracks sentence length."""
    ref = embedder(reference)
    rows = []
    for lo, hi in bins:
        subset = [s for s in sentences if lo <= len(s) <= hi]
        if len(subset) < min_count:
            continue
        rows.append({"min_len": lo, "max_len": hi, "count": len(subset),
                     "mean_len": float(np.mean([len(s) for s in subset])),
                     "fed": fed(embedder(subset), ref[:len(subset)])})
    return rows
