"""Small enumerable problems for checking the policy-gradient estimator:
exhaustive languages, exact expected gradients, a one-step bandit and an
empirical gradient-variance probe."""

from __future__ import annotations

import itertools

import numpy as np

from .corpus import EOS_ID, PAD_ID
from .generator import GeneratorParams, SamplerConfig, init_generator, log_prob, nll_and_grad, sample_batch
from .numeric import Adam
from .trainer import BaselineState, generator_gradient, generator_update


def enumerate_language(vocab_size: int, max_len: int) -> np.ndarray:
    """Every distinct padded outcome of a sampler with ``max_len`` steps: an
    EOS ends the sequence, otherwise all ``max_len`` tokens are drawn."""
    out = []
    for length in range(1, max_len + 1):
        for body in itertools.product([v for v in range(vocab_size) if v != EOS_ID], repeat=length - 1):
            out.append(list(body) + [EOS_ID] + [PAD_ID] * (max_len - length))
    out.extend(itertools.product([v for v in range(vocab_size) if v != EOS_ID], repeat=max_len))
    return np.array(out, dtype=np.int64)


def sequence_probs(tokens: np.ndarray, gen: GeneratorParams) -> np.ndarray:
    return np.exp(log_prob(tokens, gen).sum(axis=1))


def flat_grad(gen: GeneratorParams) -> np.ndarray:
    return np.concatenate([b.grad.ravel() for b in gen.blocks()])


def expected_policy_gradient(gen: GeneratorParams, tokens: np.ndarray, returns: np.ndarray,
                             baseline: float = 0.0) -> np.ndarray:
    """Exact ``-sum_x p(x) (R(x) - b) grad log p(x)`` over an enumerated
    language, with one sequence-level return per outcome."""
    p = sequence_probs(tokens, gen)
    gen.zero_grad()
    weights = (p * (np.asarray(returns, dtype=np.float64) - baseline))[:, None] * np.ones(tokens.shape)
    nll_and_grad(gen, tokens, weights)
    return flat_grad(gen)


def mle_gradient(gen: GeneratorParams, tokens: np.ndarray, target_probs: np.ndarray) -> np.ndarray:
    """Exact gradient of ``-E_{p*}[log p_theta(x)]``."""
    gen.zero_grad()
    nll_and_grad(gen, tokens, np.asarray(target_probs, dtype=np.float64)[:, None] * np.ones(tokens.shape))
    return flat_grad(gen)


def tiny_generator(vocab_size: int, seed: int = 0, hidden: int = 4, dims: tuple[int, int] = (2, 2)) -> GeneratorParams:
    rng = np.random.default_rng(seed)
    return init_generator(rng.normal(size=(vocab_size, dims[0])), dims[1], hidden, 1, rng)


def bandit_returns(tokens: np.ndarray, target: int) -> np.ndarray:
    """Reward 1 for drawing ``target`` at the single step, else 0."""
    r = np.zeros(tokens.shape)
    r[:, 0] = tokens[:, 0] == target
    return r


def bandit_sample_gradient(gen: GeneratorParams, n: int, target: int, rng: np.random.Generator,
                           baseline: float = 0.0) -> np.ndarray:
    """One REINFORCE estimate from a batch of ``n`` one-step samples."""
    traj, cache = sample_batch(gen, SamplerConfig(1.0, 1), n, rng=rng, keep_cache=True)
    traj.returns = bandit_returns(traj.tokens, target)
    gen.zero_grad()
    generator_gradient(traj, baseline, gen, cache)
    return flat_grad(gen)


def gradient_variance(gen: GeneratorParams, batch_sizes, repeats: int, target: int,
                      seed: int = 0, baseline: float = 0.0) -> np.ndarray:
    """Total variance (trace of the covariance) of the bandit gradient
    estimate at each batch size, over ``repeats`` independent batches."""
    rng = np.random.default_rng(seed)
    out = []
    for n in batch_sizes:
        grads = np.stack([bandit_sample_gradient(gen, n, target, rng, baseline) for _ in range(repeats)])
        out.append(grads.var(axis=0, ddof=1).sum())
    return np.array(out)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def train_bandit(gen: GeneratorParams, target: int, steps: int, batch_size: int = 64, lr: float = 1e-2,
                 seed: int = 0, baseline_lambda: float = 0.08) -> list[float]:
    """REINFORCE with the moving baseline on the one-step bandit; returns the
    probability of ``target`` after every step."""
    rng = np.random.default_rng(seed)
    opt = Adam(gen.blocks(), lr)
    baseline = BaselineState(0.0, baseline_lambda)
    first = np.array([[target]])
    history = []
    for _ in range(steps):
        traj, cache = sample_batch(gen, SamplerConfig(1.0, 1), batch_size, rng=rng, keep_cache=True)
        traj.rewards = bandit_returns(traj.tokens, target)
        baseline, _ = generator_update(gen, opt, baseline, traj, cache, gamma=0.0)
        history.append(float(np.exp(log_prob(first, gen)[0, 0])))
    return history
