"""Float64 matrix helpers, hand-derived layer gradients, Adam, gradient checks.

Every learnable tensor is 2-D (biases are ``1 x n`` rows). Batched inputs are
``batch x features``; a 1-D vector is treated as a batch of one.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Iterable

import numpy as np

LAYER_NORM_EPS = 1e-6


class DimensionError(ValueError):
    """Raised when operand shapes do not line up."""


class NumericError(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


@dataclasses.dataclass
class ParamBlock:
    name: str
    value: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64, ndmin=2)
        if self.value.ndim != 2:
            raise DimensionError(f"{self.name}: parameters must be 2-D, got {self.value.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"{self.name}: grad shape {self.grad.shape} != {self.value.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclasses.dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")

    @classmethod
    def for_param(cls, param: ParamBlock, learning_rate: float, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value),
                   learning_rate=learning_rate, **kwargs)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax_rows(logits, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = _as_batch(logits) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits) -> np.ndarray:
    z = _as_batch(logits)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# -- layer normalisation -----------------------------------------------------

def layer_norm_forward(x, gain, bias, eps: float = LAYER_NORM_EPS):
    x = _as_batch(x)
    gain = np.reshape(gain, (1, -1))
    bias = np.reshape(bias, (1, -1))
    if gain.shape[1] != x.shape[1] or bias.shape[1] != x.shape[1]:
        raise DimensionError(f"layer norm gain/bias width != {x.shape[1]}")
    mu = x.mean(axis=1, keepdims=True)
    centred = x - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=1, keepdims=True) + eps)
    xhat = centred * inv_std
    return xhat * gain + bias, (xhat, inv_std, gain)


def layer_norm(x, gain, bias) -> np.ndarray:
    y, _ = layer_norm_forward(x, gain, bias)
    return y[0] if np.ndim(x) == 1 else y


def layer_norm_backward(dy, cache):
    """Returns (dx, dgain, dbias) for upstream gradient ``dy``."""
    xhat, inv_std, gain = cache
    dgain = (dy * xhat).sum(axis=0, keepdims=True)
    dbias = dy.sum(axis=0, keepdims=True)
    dxhat = dy * gain
    dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dgain, dbias


# -- dropout -----------------------------------------------------------------

def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate: float, rng: np.random.Generator, training: bool = True) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng)


# -- LSTM cell ---------------------------------------------------------------

def init_lstm_params(prefix: str, input_dim: int, hidden: int, rng: np.random.Generator,
                     layer_norm: bool = False, scale: float | None = None) -> dict[str, ParamBlock]:
    """Gate order along the 4H axis is input, forget, output, candidate."""
    scale = scale if scale is not None else 1.0 / np.sqrt(input_dim + hidden)
    params = {"W": ParamBlock(f"{prefix}/W", rng.normal(0.0, scale, (input_dim + hidden, 4 * hidden)))}
    bias = np.zeros((1, 4 * hidden))
    bias[0, hidden:2 * hidden] = 1.0
    if layer_norm:
        params["ln_gain"] = ParamBlock(f"{prefix}/ln_gain", np.ones((1, 4 * hidden)))
        params["ln_bias"] = ParamBlock(f"{prefix}/ln_bias", bias)
    else:
        params["b"] = ParamBlock(f"{prefix}/b", bias)
    return params


def lstm_cell_forward(x, h, c, params: dict[str, ParamBlock]):
    """One LSTM step. With ``ln_gain``/``ln_bias`` present the gate
    pre-activations are layer-normalised instead of getting a plain bias."""
    x, h, c = _as_batch(x), _as_batch(h), _as_batch(c)
    W = params["W"].value
    hidden = h.shape[1]
    if W.shape != (x.shape[1] + hidden, 4 * hidden) or c.shape != h.shape or x.shape[0] != h.shape[0]:
        raise DimensionError(f"LSTM shapes x{x.shape} h{h.shape} c{c.shape} W{W.shape}")
    z = np.concatenate([x, h], axis=1)
    a = z @ W
    ln_cache = None
    if "ln_gain" in params:
        a, ln_cache = layer_norm_forward(a, params["ln_gain"].value, params["ln_bias"].value)
    else:
        a = a + params["b"].value
    H = hidden
    gates = sigmoid(a[:, :3 * H])
    i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
    g = np.tanh(a[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = (z, x.shape[1], i, f, o, g, c, tc, ln_cache)
    return h_new, c_new, cache


def lstm_cell_backward(dh, dc, cache, params: dict[str, ParamBlock]):
    """Accumulates parameter gradients; returns (dx, dh_prev, dc_prev)."""
    z, in_dim, i, f, o, g, c_prev, tc, ln_cache = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate([
        dct * g * i * (1.0 - i),
        dct * c_prev * f * (1.0 - f),
        do * o * (1.0 - o),
        dct * i * (1.0 - g * g),
    ], axis=1)
    if ln_cache is not None:
        da, dgain, dbias = layer_norm_backward(da, ln_cache)
        params["ln_gain"].grad += dgain
        params["ln_bias"].grad += dbias
    else:
        params["b"].grad += da.sum(axis=0, keepdims=True)
    W = params["W"]
    W.grad += z.T @ da
    dz = da @ W.value.T
    return dz[:, :in_dim], dz[:, in_dim:], dct * f


# -- optimisation --------------------------------------------------------------

def adam_step(param: ParamBlock, state: AdamState, l2_weight: float = 0.0) -> None:
    """Bias-corrected Adam on ``param`` in place, then clears its gradient.

    A block whose effective gradient is exactly zero is left untouched
    (neither value nor moments nor step counter move).
    """
    if state.m.shape != param.value.shape:
        raise DimensionError(f"{param.name}: Adam state shape {state.m.shape} != {param.value.shape}")
    grad = param.grad + l2_weight * param.value if l2_weight else param.grad
    if not grad.any():
        param.zero_grad()
        return
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    param.zero_grad()


class Adam:
    """Adam over a fixed list of blocks, one AdamState each."""

    def __init__(self, params: Iterable[ParamBlock], learning_rate: float,
                 beta1: float = 0.5, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.states = [AdamState.for_param(p, learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
                       for p in self.params]

    def step(self, l2_weight: float = 0.0) -> None:
        for p, s in zip(self.params, self.states):
            adam_step(p, s, l2_weight)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- gradient checking ---------------------------------------------------------

def finite_difference_check(loss_fn: Callable[[], float], params: Iterable[ParamBlock],
                            step: float = 1e-5, floor: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` must return the scalar loss and accumulate analytic gradients
    into ``.grad`` of ``params``; gradients are zeroed before each call.
    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(params)

    def evaluate() -> float:
        for p in params:
            p.zero_grad()
        loss = float(loss_fn())
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss}")
        return loss

    evaluate()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        a_flat = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = evaluate()
            flat[k] = orig - step
            down = evaluate()
            flat[k] = orig
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(a_flat[k]), abs(numeric), floor)
            worst = max(worst, abs(a_flat[k] - numeric) / denom)
    for p in params:
        p.zero_grad()
    return worst
