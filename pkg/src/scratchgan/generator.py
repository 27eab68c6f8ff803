"""Autoregressive LSTM generator with tied input/output embeddings.

Per step: the previous token's embedding is projected to the LSTM width and
fed to a stack of LSTM layers. Layer ``l > 0`` sees the projected input
concatenated with layer ``l - 1``'s output (skip connections). The
concatenated hidden states are projected to the embedding width and scored
against every embedding row, plus a per-token bias, to give the logits.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .corpus import EOS_ID, PAD_ID, EmbeddingTable, step_mask
from .numeric import (
    ParamBlock,
    dropout_mask,
    init_lstm_params,
    log_softmax_rows,
    lstm_cell_backward,
    lstm_cell_forward,
)


@dataclasses.dataclass
class GeneratorParams:
    embedding: EmbeddingTable
    input_proj: ParamBlock
    input_bias: ParamBlock
    lstm_layers: list[dict[str, ParamBlock]]
    output_proj: ParamBlock
    logit_bias: ParamBlock

    def __post_init__(self):
        if self.output_proj.value.shape[1] != self.embedding.total_dim:
            raise ValueError("output projection must map onto the embedding width")
        if self.logit_bias.value.shape != (1, self.embedding.vocab_size):
            raise ValueError("logit bias must have one entry per vocabulary token")

    @property
    def vocab_size(self) -> int:
        return self.embedding.vocab_size

    @property
    def hidden(self) -> int:
        return self.input_proj.value.shape[1]

    def blocks(self) -> list[ParamBlock]:
        """Trainable blocks in a fixed order (the frozen pretrained rows excluded)."""
        out = [self.embedding.learned, self.input_proj, self.input_bias]
        for layer in self.lstm_layers:
            out.extend(layer[k] for k in sorted(layer))
        out.extend([self.output_proj, self.logit_bias])
        return out

    def zero_grad(self) -> None:
        for p in self.blocks():
            p.zero_grad()


def init_generator(pretrained: np.ndarray, learned_dim: int, hidden: int, num_layers: int,
                   rng: np.random.Generator, prefix: str = "gen") -> GeneratorParams:
    embedding = EmbeddingTable.create(pretrained, learned_dim, rng, f"{prefix}/embedding")
    d = embedding.total_dim
    layers = []
    for l in range(num_layers):
        in_dim = hidden if l == 0 else 2 * hidden
        layers.append(init_lstm_params(f"{prefix}/lstm{l}", in_dim, hidden, rng))
    return GeneratorParams(
        embedding=embedding,
        input_proj=ParamBlock(f"{prefix}/input_proj", rng.normal(0, 1 / np.sqrt(d), (d, hidden))),
        input_bias=ParamBlock(f"{prefix}/input_bias", np.zeros((1, hidden))),
        lstm_layers=layers,
        output_proj=ParamBlock(f"{prefix}/output_proj",
                               rng.normal(0, 1 / np.sqrt(num_layers * hidden), (num_layers * hidden, d))),
        logit_bias=ParamBlock(f"{prefix}/logit_bias", np.zeros((1, embedding.vocab_size))),
    )


@dataclasses.dataclass
class GeneratorState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, params: GeneratorParams, batch: int = 1) -> "GeneratorState":
        H = params.hidden
        L = len(params.lstm_layers)
        return cls([np.zeros((batch, H)) for _ in range(L)], [np.zeros((batch, H)) for _ in range(L)])


@dataclasses.dataclass
class SamplerConfig:
    temperature: float = 1.0
    max_len: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclasses.dataclass
class Trajectory:
    """A sampled batch. All arrays are ``n x max_len``; masked-out entries are 0."""

    tokens: np.ndarray
    log_probs: np.ndarray
    mask: np.ndarray
    temperature: float = 1.0
    rewards: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self):
        if self.rewards is None:
            self.rewards = np.zeros(self.tokens.shape)
        if self.returns is None:
            self.returns = np.zeros(self.tokens.shape)

    @property
    def lengths(self) -> np.ndarray:
        """Sentence lengths excluding EOS."""
        return self.mask.sum(axis=1) - (self.tokens == EOS_ID).any(axis=1)


def _step(params: GeneratorParams, E: np.ndarray, prev: np.ndarray, state: GeneratorState,
          drop: np.ndarray | None = None):
    e = E[prev]
    if drop is not None:
        e = e * drop
    u = e @ params.input_proj.value + params.input_bias.value
    hs, cs, caches = [], [], []
    for l, layer in enumerate(params.lstm_layers):
        x = u if l == 0 else np.concatenate([u, hs[-1]], axis=1)
        h, c, cache = lstm_cell_forward(x, state.h[l], state.c[l], layer)
        hs.append(h)
        cs.append(c)
        caches.append(cache)
    hcat = hs[0] if len(hs) == 1 else np.concatenate(hs, axis=1)
    o = hcat @ params.output_proj.value
    logits = o @ E.T + params.logit_bias.value
    return logits, GeneratorState(hs, cs), (prev, e, drop, caches, hcat, o)


def gen_step(prev_token, state: GeneratorState, params: GeneratorParams):
    """Logits for the next token given the previous one(s); returns (logits, state')."""
    prev = np.atleast_1d(np.asarray(prev_token, dtype=np.int64))
    if (prev < 0).any() or (prev >= params.vocab_size).any():
        raise ValueError(f"token id out of range [0, {params.vocab_size})")
    logits, new_state, _ = _step(params, params.embedding.matrix(), prev, state)
    return (logits[0] if np.ndim(prev_token) == 0 else logits), new_state


def _unroll(params: GeneratorParams, n: int, max_len: int, tokens: np.ndarray | None = None,
            rng: np.random.Generator | None = None, temperature: float = 1.0,
            keep_cache: bool = False, dropout_rate: float = 0.0):
    """Teacher-forces ``tokens`` or, when ``tokens`` is None, samples them.

    Returns (tokens, log_probs, mask, cache). Log-probabilities are always
    under the untempered distribution.
    """
    E = params.embedding.matrix()
    sampling = tokens is None
    if sampling:
        tokens = np.full((n, max_len), PAD_ID, dtype=np.int64)
        mask = np.zeros((n, max_len), dtype=bool)
    else:
        tokens = np.asarray(tokens, dtype=np.int64)
        mask = step_mask(tokens)
    log_probs = np.zeros((n, max_len))
    state = GeneratorState.zeros(params, n)
    prev = np.full(n, PAD_ID, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    steps = []
    rows = np.arange(n)
    for t in range(max_len):
        drop = None
        if dropout_rate > 0.0:
            drop = dropout_mask((n, E.shape[1]), dropout_rate, rng)
        logits, state, cache = _step(params, E, prev, state, drop)
        logp = log_softmax_rows(logits)
        if sampling:
            if temperature == 1.0:
                probs = np.exp(logp)
            else:
                scaled = logits / temperature
                scaled -= scaled.max(axis=1, keepdims=True)
                probs = np.exp(scaled)
                probs /= probs.sum(axis=1, keepdims=True)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(n)[:, None] * cdf[:, -1:]
            choice = np.minimum((cdf <= u).sum(axis=1), params.vocab_size - 1)
            cur = np.where(alive, choice, PAD_ID)
            tokens[:, t] = cur
            mask[:, t] = alive
        else:
            cur = tokens[:, t]
        log_probs[:, t] = np.where(mask[:, t], logp[rows, cur], 0.0)
        if keep_cache:
            steps.append((cache, np.exp(logp)))
        if sampling:
            alive = alive & (cur != EOS_ID)
            if not alive.any():
                break
        prev = cur
    return tokens, log_probs, mask, (E, steps)


def _backward(params: GeneratorParams, tokens: np.ndarray, cache, weights: np.ndarray) -> None:
    """Accumulates gradients of ``-sum(weights * log p(tokens))`` into params."""
    E, steps = cache
    n = tokens.shape[0]
    rows = np.arange(n)
    active = np.flatnonzero(np.abs(weights[:, :len(steps)]).sum(axis=0))
    if active.size == 0:
        return
    last = int(active[-1])
    L = len(params.lstm_layers)
    H = params.hidden
    dE = np.zeros_like(E)
    dh_next = [np.zeros((n, H)) for _ in range(L)]
    dc_next = [np.zeros((n, H)) for _ in range(L)]
    Wout = params.output_proj.value
    Win = params.input_proj.value
    for t in range(last, -1, -1):
        (prev, e, drop, caches, hcat, o), probs = steps[t]
        w = weights[:, t]
        dlogits = probs * w[:, None]
        dlogits[rows, tokens[:, t]] -= w
        params.logit_bias.grad += dlogits.sum(axis=0, keepdims=True)
        dE += dlogits.T @ o
        do = dlogits @ E
        params.output_proj.grad += hcat.T @ do
        dhcat = do @ Wout.T
        dh = [dhcat[:, l * H:(l + 1) * H] + dh_next[l] for l in range(L)]
        du = np.zeros((n, H))
        for l in range(L - 1, -1, -1):
            dx, dh_prev, dc_prev = lstm_cell_backward(dh[l], dc_next[l], caches[l], params.lstm_layers[l])
            if l > 0:
                du += dx[:, :H]
                dh[l - 1] = dh[l - 1] + dx[:, H:]
            else:
                du += dx
            dh_next[l] = dh_prev
            dc_next[l] = dc_prev
        params.input_proj.grad += e.T @ du
        params.input_bias.grad += du.sum(axis=0, keepdims=True)
        de = du @ Win.T
        if drop is not None:
            de = de * drop
        np.add.at(dE, prev, de)
    params.embedding.accumulate(dE)


def sample_batch(params: GeneratorParams, cfg: SamplerConfig, n: int,
                 rng: np.random.Generator | None = None, keep_cache: bool = False):
    """Samples ``n`` sequences; with ``keep_cache`` also returns the forward
    cache for :func:`policy_backward`."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    tokens, log_probs, mask, cache = _unroll(params, n, cfg.max_len, rng=rng,
                                             temperature=cfg.temperature, keep_cache=keep_cache)
    traj = Trajectory(tokens, log_probs, mask, temperature=cfg.temperature)
    return (traj, cache) if keep_cache else traj


def policy_backward(params: GeneratorParams, traj: Trajectory, cache, weights: np.ndarray) -> None:
    """Gradient of ``-sum(weights * log p)`` over a trajectory sampled with
    ``keep_cache=True``."""
    _backward(params, traj.tokens, cache, np.where(traj.mask, weights, 0.0))


def log_prob(tokens, params: GeneratorParams) -> np.ndarray:
    """Teacher-forced per-step log-probabilities; zero on pad steps after EOS."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    _, lp, _, _ = _unroll(params, tokens.shape[0], tokens.shape[1], tokens=tokens)
    return lp


def nll_and_grad(params: GeneratorParams, tokens: np.ndarray, weights: np.ndarray | None = None,
                 dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> float:
    """``-sum(weights * log p)`` under teacher forcing; gradients accumulate into params.

    ``weights`` defaults to the step mask, i.e. the summed sequence NLL.
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    _, lp, mask, cache = _unroll(params, tokens.shape[0], tokens.shape[1], tokens=tokens,
                                 keep_cache=True, dropout_rate=dropout_rate, rng=rng)
    weights = mask.astype(np.float64) if weights is None else np.where(mask, weights, 0.0)
    _backward(params, tokens, cache, weights)
    return float(-(weights * lp).sum())


def nll_stats(tokens: np.ndarray, params: GeneratorParams, batch_size: int = 512) -> tuple[float, int]:
    """(total negative log-likelihood, number of scored steps) over a dataset."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    total, count = 0.0, 0
    for start in range(0, tokens.shape[0], batch_size):
        chunk = tokens[start:start + batch_size]
        total -= log_prob(chunk, params).sum()
        count += int(step_mask(chunk).sum())
    return total, count


def perplexity(tokens, params: GeneratorParams) -> float:
    """exp of the mean per-token NLL over all scored steps (EOS included)."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if tokens.size == 0:
        raise ValueError("perplexity needs a non-empty dataset")
    total, count = nll_stats(tokens, params)
    return float(np.exp(total / count))
