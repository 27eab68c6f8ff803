"""Comparison models: an interpolated Kneser-Ney n-gram model and a
teacher-forced LSTM language model sharing the generator's code paths."""

from __future__ import annotations

import copy
import dataclasses
import functools
import logging
import os
from collections import defaultdict
from typing import Sequence

import numpy as np

from .corpus import (
    EOS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    UNK_ID,
    TokenSequence,
    Vocabulary,
    batch_iterator,
    encode_corpus,
    step_mask,
)
from .generator import GeneratorParams, init_generator, nll_and_grad, nll_stats
from .numeric import Adam
from .trainer import DivergenceError

log = logging.getLogger(__name__)

BOS = -1  # left padding symbol; never predicted
KN_FORMAT = "kneser-ney-counts"
KN_FORMAT_VERSION = 1

Sentence = Sequence[str]
Table = dict[tuple, dict[int, int]]


# -- Kneser-Ney --------------------------------------------------------------

@dataclasses.dataclass(eq=False)
class KneserNeyModel:
    """Interpolated Kneser-Ney over the types of a training corpus.

    ``counts[k]`` maps a length ``k-1`` context to raw counts of the next
    token for k-grams ending at a predicted position. ``continuation_counts[k]``
    (k < order) holds the number of distinct left extensions of each k-gram.
    Token ids follow ``vocab``; the pad id is never predicted.
    """

    order: int
    discount: float
    vocab: Vocabulary
    counts: list[Table]
    continuation_counts: list[Table]

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        # (total, distinct followers) per context, for raw and continuation tables
        self._raw_totals = [_totals(t) for t in self.counts]
        self._cont_totals = [_totals(t) for t in self.continuation_counts]
        self._num_predictable = len(self.vocab) - 1
        self.distribution = functools.lru_cache(maxsize=65536)(self._distribution)

    # -- scoring

    def _context(self, history: Sequence[int]) -> tuple:
        pad = (BOS,) * (self.order - 1)
        return (pad + tuple(history))[len(history):] if self.order > 1 else ()

    def prob(self, token: int, history: Sequence[int]) -> float:
        """p(token | history) where ``history`` is the sentence so far (ids)."""
        if token == PAD_ID or not 0 <= token < len(self.vocab):
            return 0.0
        return self._prob(token, self._context(history))

    def _prob(self, w: int, context: tuple) -> float:
        p = 1.0 / self._num_predictable
        for k in range(1, len(context) + 2):
            h = context[len(context) - k + 1:]
            highest = k == self.order
            table = self.counts[k] if highest else self.continuation_counts[k]
            totals = (self._raw_totals if highest else self._cont_totals)[k]
            if h not in totals:
                continue
            total, types = totals[h]
            c = table[h].get(w, 0)
            p = (max(c - self.discount, 0.0) + self.discount * types * p) / total
        return p

    def _distribution(self, context: tuple) -> np.ndarray:
        p = np.full(len(self.vocab), 1.0 / self._num_predictable)
        p[PAD_ID] = 0.0
        for k in range(1, len(context) + 2):
            h = context[len(context) - k + 1:]
            highest = k == self.order
            table = self.counts[k] if highest else self.continuation_counts[k]
            totals = (self._raw_totals if highest else self._cont_totals)[k]
            if h not in totals:
                continue
            total, types = totals[h]
            c = np.zeros(len(self.vocab))
            nxt = table[h]
            c[list(nxt)] = list(nxt.values())
            p = (np.maximum(c - self.discount, 0.0) + self.discount * types * p) / total
        p.setflags(write=False)
        return p

    def next_distribution(self, history: Sequence[int]) -> np.ndarray:
        return self.distribution(self._context(history))

    def sentence_log_prob(self, ids: Sequence[int]) -> float:
        """log p of a token id sequence followed by EOS."""
        ids = list(ids)
        total = 0.0
        for t, w in enumerate(ids + [EOS_ID]):
            total += np.log(self.prob(w, ids[:t]))
        return total

    def encode(self, sentence: Sentence) -> list[int]:
        return self.vocab.encode(sentence)

    def nll_stats(self, sentences: Sequence[Sentence]) -> tuple[float, int]:
        total, count = 0.0, 0
        for s in sentences:
            total -= self.sentence_log_prob(self.encode(s))
            count += len(s) + 1
        return total, count

    def nll_per_token(self, sentences: Sequence[Sentence]) -> float:
        total, count = self.nll_stats(sentences)
        if count == 0:
            raise ValueError("cannot score an empty set of sentences")
        return total / count

    def perplexity(self, sentences: Sequence[Sentence]) -> float:
        return float(np.exp(self.nll_per_token(sentences)))

    # -- serialization

    def dumps(self) -> str:
        """Versioned plain-text count dump; ``loads(dumps(m))`` rebuilds ``m``."""
        lines = [f"{KN_FORMAT} {KN_FORMAT_VERSION}",
                 f"order {self.order}", f"discount {self.discount!r}", f"vocab {len(self.vocab)}"]
        lines += [f"{tok}\t{freq}" for tok, freq in zip(self.vocab.id_to_token, self.vocab.frequencies)]
        for kind, tables in (("raw", self.counts), ("cont", self.continuation_counts)):
            for k in range(1, len(tables)):
                entries = sorted((h + (w,), c) for h, nxt in tables[k].items() for w, c in nxt.items())
                lines.append(f"{kind} {k} {len(entries)}")
                lines += [" ".join(map(str, gram)) + f"\t{c}" for gram, c in entries]
        return "\n".join(lines) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "KneserNeyModel":
        lines = iter(text.splitlines())
        header = next(lines, "").split()
        if len(header) != 2 or header[0] != KN_FORMAT:
            raise ValueError("not a Kneser-Ney count file")
        if int(header[1]) != KN_FORMAT_VERSION:
            raise ValueError(f"unsupported Kneser-Ney format version {header[1]}")
        order = int(next(lines).split()[1])
        discount = float(next(lines).split()[1])
        size = int(next(lines).split()[1])
        tokens, freqs = [], []
        for _ in range(size):
            tok, freq = next(lines).rsplit("\t", 1)
            tokens.append(tok)
            freqs.append(int(freq))
        tables = {"raw": [{} for _ in range(order + 1)], "cont": [{} for _ in range(order)]}
        for line in lines:
            kind, k, n = line.split()
            table = tables[kind][int(k)]
            for _ in range(int(n)):
                gram, c = next(lines).split("\t")
                ids = tuple(int(x) for x in gram.split())
                table.setdefault(ids[:-1], {})[ids[-1]] = int(c)
        return cls(order, discount, Vocabulary(tokens, freqs), tables["raw"], tables["cont"])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "KneserNeyModel":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _totals(table: Table) -> dict[tuple, tuple[int, int]]:
    return {h: (sum(nxt.values()), len(nxt)) for h, nxt in table.items()}


def _kn_vocab(corpus: Sequence[Sentence]) -> Vocabulary:
    types = sorted({w for s in corpus for w in s} - set(RESERVED_TOKENS))
    freq = defaultdict(int)
    for s in corpus:
        for w in s:
            freq[w] += 1
    return Vocabulary(list(RESERVED_TOKENS) + types,
                      [0, len(corpus), freq[RESERVED_TOKENS[UNK_ID]]] + [freq[w] for w in types])


def fit_kn(corpus: Sequence[Sentence], order: int = 5, discount: float = 0.75) -> KneserNeyModel:
    """Counts every k-gram (k <= order) ending at a predicted position of the
    BOS-padded, EOS-terminated sentences."""
    if not corpus:
        raise ValueError("cannot fit a Kneser-Ney model on an empty corpus")
    if order < 1:
        raise ValueError("order must be >= 1")
    vocab = _kn_vocab(corpus)
    counts: list[Table] = [{} for _ in range(order + 1)]
    for s in corpus:
        seq = [BOS] * (order - 1) + vocab.encode(s) + [EOS_ID]
        for i in range(order - 1, len(seq)):
            for k in range(1, order + 1):
                h = tuple(seq[i - k + 1:i])
                nxt = counts[k].setdefault(h, {})
                nxt[seq[i]] = nxt.get(seq[i], 0) + 1
    cont: list[Table] = [{} for _ in range(order)]
    for k in range(1, order):
        for h, nxt in counts[k + 1].items():
            for w in nxt:
                inner = cont[k].setdefault(h[1:], {})
                inner[w] = inner.get(w, 0) + 1
    return KneserNeyModel(order, discount, vocab, counts, cont)


def kn_sample(model: KneserNeyModel, max_len: int, rng: np.random.Generator,
              temperature: float = 1.0) -> TokenSequence:
    """Ancestral sampling until EOS or ``max_len`` tokens; ``temperature``
    rescales each conditional as ``p ** (1 / temperature)``."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    history: list[int] = []
    while len(history) < max_len:
        p = model.next_distribution(history)
        if temperature != 1.0:
            p = p ** (1.0 / temperature)
        w = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        w = min(w, len(p) - 1)
        if w == EOS_ID:
            ids[len(history)] = EOS_ID
            break
        history.append(w)
        ids[len(history) - 1] = w
    return TokenSequence(ids, len(history))


def kn_sample_sentences(model: KneserNeyModel, n: int, max_len: int, seed: int = 0,
                        temperature: float = 1.0) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    return [model.vocab.detokenize(kn_sample(model, max_len, rng, temperature).ids) for _ in range(n)]


# -- maximum-likelihood LSTM -------------------------------------------------

@dataclasses.dataclass
class MleLmConfig:
    lstm_size: int = 64
    embedding_size: int = 16
    embedding_dropout: float = 0.2
    lr: float = 3e-3
    num_layers: int = 1
    batch_size: int = 64
    total_steps: int = 1000
    checkpoint_every: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("lstm_size", "embedding_size", "num_layers", "batch_size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if not 0.0 <= self.embedding_dropout < 1.0:
            raise ValueError("embedding_dropout must be in [0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclasses.dataclass
class MleResult:
    params: GeneratorParams
    best_step: int
    best_perplexity: float
    history: list[tuple[int, float]]
    losses: list[float]


def init_mle(vocab_size: int, cfg: MleLmConfig, pretrained: np.ndarray | None = None) -> GeneratorParams:
    """The generator architecture, by default with a fully learned embedding."""
    rng = np.random.default_rng(cfg.seed)
    if pretrained is None:
        pretrained = np.zeros((vocab_size, 0))
    return init_generator(pretrained, cfg.embedding_size, cfg.lstm_size, cfg.num_layers, rng, prefix="mle")


def _perplexity(params: GeneratorParams, tokens: np.ndarray) -> float:
    total, count = nll_stats(tokens, params)
    return float(np.exp(total / count))


def train_mle(train_ids: np.ndarray, valid_ids: np.ndarray, vocab_size: int, cfg: MleLmConfig,
              pretrained: np.ndarray | None = None, on_checkpoint=None, on_metrics=None) -> MleResult:
    """Teacher-forced cross-entropy with Adam; keeps the parameters with the
    lowest validation perplexity seen at a checkpoint."""
    if len(train_ids) == 0 or len(valid_ids) == 0:
        raise ValueError("train_mle needs non-empty training and validation data")
    params = init_mle(vocab_size, cfg, pretrained)
    opt = Adam(params.blocks(), cfg.lr, beta1=0.9)
    rng = np.random.default_rng(cfg.seed + 1)
    batches = batch_iterator(train_ids, min(cfg.batch_size, len(train_ids)), np.random.default_rng(cfg.seed + 2))
    history = [(0, _perplexity(params, valid_ids))]
    best = (history[0][1], 0, copy.deepcopy(params))
    losses: list[float] = []
    for step in range(1, cfg.total_steps + 1):
        batch = next(batches)
        weights = step_mask(batch) / step_mask(batch).sum()
        params.zero_grad()
        loss = nll_and_grad(params, batch, weights, dropout_rate=cfg.embedding_dropout, rng=rng)
        if not np.isfinite(loss):
            raise DivergenceError("non-finite language-model loss", {"step": step, "loss": loss})
        opt.step()
        losses.append(loss)
        if on_metrics:
            on_metrics({"step": step, "loss": loss})
        if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
            ppl = _perplexity(params, valid_ids)
            if not np.isfinite(ppl):
                raise DivergenceError("non-finite validation perplexity", {"step": step, "loss": loss})
            history.append((step, ppl))
            log.info("mle step %d validation perplexity %.4f", step, ppl)
            if ppl < best[0]:
                best = (ppl, step, copy.deepcopy(params))
            if on_checkpoint:
                on_checkpoint(step, params, ppl)
    return MleResult(best[2], best[1], best[0], history, losses)


class GeneratorLM:
    """Scores tokenized sentences with a generator-architecture model."""

    def __init__(self, params: GeneratorParams, vocab: Vocabulary, max_len: int):
        self.params = params
        self.vocab = vocab
        self.max_len = max_len

    def nll_per_token(self, sentences: Sequence[Sentence]) -> float:
        if not sentences:
            raise ValueError("cannot score an empty set of sentences")
        total, count = nll_stats(encode_corpus(self.vocab, sentences, self.max_len), self.params)
        return total / count


def fit_lstm_lm(corpus: Sequence[Sentence], vocab: Vocabulary, max_len: int, cfg: MleLmConfig) -> GeneratorLM:
    """Trains on ``corpus`` with a held-out tenth for selection."""
    from .corpus import encode_corpus

    if len(corpus) < 2:
        raise ValueError("need at least two sentences to fit a language model")
    ids = encode_corpus(vocab, corpus, max_len)
    split = max(1, len(ids) // 10)
    result = train_mle(ids[split:], ids[:split], len(vocab), cfg)
    return GeneratorLM(result.params, vocab, max_len)
