"""Recurrent prefix discriminator emitting P(real) after every token."""

from __future__ import annotations

import dataclasses

import numpy as np

from .corpus import EmbeddingTable, step_mask
from .numeric import (
    ParamBlock,
    dropout_mask,
    init_lstm_params,
    lstm_cell_backward,
    lstm_cell_forward,
    sigmoid,
)

NUM_PERIODS = 8


@dataclasses.dataclass(frozen=True)
class PositionalEncoder:
    """Eight sinusoids with log-linearly spaced periods from 2 to ``4 * max_len``."""

    max_len: int

    @property
    def periods(self) -> np.ndarray:
        first, last = 2.0, 4.0 * self.max_len
        return first * (last / first) ** (np.arange(NUM_PERIODS) / (NUM_PERIODS - 1))

    def __call__(self, t) -> np.ndarray:
        return positional_features(t, self.periods)


def positional_features(t, periods: np.ndarray) -> np.ndarray:
    """``sin(2 pi t / T_i)`` for each period; ``t`` may be an array of steps."""
    t = np.asarray(t, dtype=np.float64)
    if (t < 0).any():
        raise ValueError("positions must be non-negative")
    return np.sin(2.0 * np.pi * t[..., None] / periods)


@dataclasses.dataclass
class DiscriminatorParams:
    embedding: EmbeddingTable
    input_proj: ParamBlock
    input_bias: ParamBlock
    lstm_layers: list[dict[str, ParamBlock]]
    output_head: ParamBlock
    output_bias: ParamBlock
    positional: PositionalEncoder | None = None
    dropout_rate: float = 0.0

    @property
    def hidden(self) -> int:
        return self.input_proj.value.shape[1]

    def blocks(self) -> list[ParamBlock]:
        out = [self.embedding.learned, self.input_proj, self.input_bias]
        for layer in self.lstm_layers:
            out.extend(layer[k] for k in sorted(layer))
        out.extend([self.output_head, self.output_bias])
        return out

    def zero_grad(self) -> None:
        for p in self.blocks():
            p.zero_grad()


def init_discriminator(pretrained: np.ndarray, learned_dim: int, hidden: int, num_layers: int,
                       rng: np.random.Generator, max_len: int, positional: bool = True,
                       dropout_rate: float = 0.0, prefix: str = "disc") -> DiscriminatorParams:
    embedding = EmbeddingTable.create(pretrained, learned_dim, rng, f"{prefix}/embedding")
    in_dim = embedding.total_dim + (NUM_PERIODS if positional else 0)
    layers = [init_lstm_params(f"{prefix}/lstm{l}", hidden, hidden, rng, layer_norm=True)
              for l in range(num_layers)]
    return DiscriminatorParams(
        embedding=embedding,
        input_proj=ParamBlock(f"{prefix}/input_proj", rng.normal(0, 1 / np.sqrt(in_dim), (in_dim, hidden))),
        input_bias=ParamBlock(f"{prefix}/input_bias", np.zeros((1, hidden))),
        lstm_layers=layers,
        output_head=ParamBlock(f"{prefix}/output_head", rng.normal(0, 1 / np.sqrt(hidden), (hidden, 1))),
        output_bias=ParamBlock(f"{prefix}/output_bias", np.zeros((1, 1))),
        positional=PositionalEncoder(max_len) if positional else None,
        dropout_rate=dropout_rate,
    )


def _forward(params: DiscriminatorParams, tokens: np.ndarray, training: bool,
             rng: np.random.Generator | None, keep_cache: bool):
    """Per-step logits (pre-sigmoid) for every position; pads are scored too
    and masked by callers."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    n, T = tokens.shape
    E = params.embedding.matrix()
    H = params.hidden
    L = len(params.lstm_layers)
    h = [np.zeros((n, H)) for _ in range(L)]
    c = [np.zeros((n, H)) for _ in range(L)]
    pos = None
    if params.positional is not None:
        pos = params.positional(np.arange(1, T + 1))
    logits = np.zeros((n, T))
    caches = []
    use_dropout = training and params.dropout_rate > 0.0
    for t in range(T):
        e = E[tokens[:, t]]
        drop = None
        if use_dropout:
            drop = dropout_mask(e.shape, params.dropout_rate, rng)
            e = e * drop
        x = e if pos is None else np.concatenate([e, np.broadcast_to(pos[t], (n, NUM_PERIODS))], axis=1)
        inp = x @ params.input_proj.value + params.input_bias.value
        layer_caches = []
        for l, layer in enumerate(params.lstm_layers):
            h[l], c[l], cache = lstm_cell_forward(inp if l == 0 else h[l - 1], h[l], c[l], layer)
            layer_caches.append(cache)
        logits[:, t] = (h[-1] @ params.output_head.value + params.output_bias.value)[:, 0]
        if keep_cache:
            caches.append((x, drop, layer_caches, h[-1]))
    return logits, (E, caches)


def _backward(params: DiscriminatorParams, tokens: np.ndarray, cache, dlogits: np.ndarray) -> None:
    E, caches = cache
    n, T = tokens.shape
    H = params.hidden
    L = len(params.lstm_layers)
    active = np.flatnonzero(np.abs(dlogits).sum(axis=0))
    if active.size == 0:
        return
    dE = np.zeros_like(E)
    dh_next = [np.zeros((n, H)) for _ in range(L)]
    dc_next = [np.zeros((n, H)) for _ in range(L)]
    emb_dim = E.shape[1]
    for t in range(int(active[-1]), -1, -1):
        x, drop, layer_caches, h_top = caches[t]
        dz = dlogits[:, t:t + 1]
        params.output_head.grad += h_top.T @ dz
        params.output_bias.grad += dz.sum(axis=0, keepdims=True)
        dh = dz @ params.output_head.value.T + dh_next[L - 1]
        for l in range(L - 1, -1, -1):
            dx, dh_prev, dc_prev = lstm_cell_backward(dh, dc_next[l], layer_caches[l], params.lstm_layers[l])
            dh_next[l] = dh_prev
            dc_next[l] = dc_prev
            if l > 0:
                dh = dx + dh_next[l - 1]
        dinp = dx
        params.input_proj.grad += x.T @ dinp
        params.input_bias.grad += dinp.sum(axis=0, keepdims=True)
        de = (dinp @ params.input_proj.value.T)[:, :emb_dim]
        if drop is not None:
            de = de * drop
        np.add.at(dE, tokens[:, t], de)
    params.embedding.accumulate(dE)


def score_prefixes(tokens, params: DiscriminatorParams, training: bool = False,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """D(x_t | x_1..x_{t-1}) for every step; entries past EOS are 0."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    logits, _ = _forward(params, tokens, training, rng, keep_cache=False)
    return np.where(step_mask(tokens), sigmoid(logits), 0.0)


def disc_loss(real_tokens, fake_tokens, params: DiscriminatorParams,
              rng: np.random.Generator | None = None, training: bool = True) -> float:
    """Mean ``-log D`` over real steps plus mean ``-log(1 - D)`` over fake steps.

    Gradients accumulate into ``params``; the L2 term is left to the optimiser.
    """
    real = np.atleast_2d(np.asarray(real_tokens, dtype=np.int64))
    fake = np.atleast_2d(np.asarray(fake_tokens, dtype=np.int64))
    if real.shape[1] != fake.shape[1]:
        raise ValueError("real and fake batches need the same max_len")
    tokens = np.concatenate([real, fake], axis=0)
    n_real = real.shape[0]
    mask = step_mask(tokens)
    target = np.zeros(tokens.shape)
    target[:n_real] = 1.0
    norm = np.empty(tokens.shape[0])
    norm[:n_real] = mask[:n_real].sum()
    norm[n_real:] = mask[n_real:].sum()
    logits, cache = _forward(params, tokens, training, rng, keep_cache=True)
    # -log sigmoid(z) = softplus(-z), -log(1 - sigmoid(z)) = softplus(z)
    signed = np.where(target == 1.0, -logits, logits)
    per_step = np.logaddexp(0.0, signed)
    loss = float((np.where(mask, per_step, 0.0).sum(axis=1) / norm).sum())
    dlogits = np.where(mask, (sigmoid(logits) - target) / norm[:, None], 0.0)
    _backward(params, tokens, cache, dlogits)
    return loss
