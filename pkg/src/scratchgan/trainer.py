"""Adversarial training from scratch: dense rewards, REINFORCE, moving baseline."""

from __future__ import annotations

import dataclasses
import json
import logging
from typing import Callable

import numpy as np

from .corpus import batch_iterator
from .discriminator import DiscriminatorParams, disc_loss, score_prefixes
from .generator import (
    GeneratorParams,
    SamplerConfig,
    Trajectory,
    policy_backward,
    sample_batch,
)
from .numeric import Adam, NumericError

log = logging.getLogger(__name__)

__all__ = [
    "BaselineState", "TrainConfig", "Trajectory", "GanState", "DivergenceError",
    "rewards_from_scores", "discounted_returns", "baseline_update", "generator_gradient",
    "generator_update", "train_step", "train_loop",
]


class DivergenceError(NumericError):
    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(f"{message}: {json.dumps(diagnostics, sort_keys=True, default=float)}")


@dataclasses.dataclass
class BaselineState:
    b: float = 0.0
    lam: float = 0.08

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("baseline lambda must be in [0, 1]")


@dataclasses.dataclass
class TrainConfig:
    batch_size: int = 512
    gamma: float = 0.23
    gen_lr: float = 9.59e-5
    disc_lr: float = 9.38e-3
    disc_steps_per_gen_step: int = 1
    l2_weight: float = 1e-6
    dropout_rate: float = 0.1
    baseline_lambda: float = 0.08
    total_steps: int = 100000
    checkpoint_every: int = 1000
    seed: int = 0
    max_len: int = 50
    fed_samples: int = 10000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.gen_lr > 0 and self.disc_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")


def rewards_from_scores(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """r_t = 2 D - 1 on generated steps, 0 elsewhere."""
    r = 2.0 * np.asarray(scores, dtype=np.float64) - 1.0
    return r if mask is None else np.where(mask, r, 0.0)


def discounted_returns(rewards: np.ndarray, gamma: float, mask: np.ndarray | None = None) -> np.ndarray:
    """R_t = r_t + gamma R_{t+1}, computed right to left and zeroed off-mask."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    r = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    m = np.ones(r.shape, dtype=bool) if mask is None else np.atleast_2d(mask)
    r = np.where(m, r, 0.0)
    out = np.zeros_like(r)
    running = np.zeros(r.shape[0])
    for t in range(r.shape[1] - 1, -1, -1):
        running = r[:, t] + gamma * running
        out[:, t] = running
    out = np.where(m, out, 0.0)
    return out if np.ndim(rewards) == 2 else out[0]


def baseline_update(state: BaselineState, mean_return: float) -> BaselineState:
    return BaselineState(state.lam * state.b + (1.0 - state.lam) * mean_return, state.lam)


def generator_gradient(traj: Trajectory, baseline: float, params: GeneratorParams, cache) -> float:
    """Accumulates the gradient of ``(1/N) sum_n sum_t -(R_t - b) log p(x_t)``
    and returns that pseudo-loss. Returns are constants here."""
    n = traj.tokens.shape[0]
    advantage = np.where(traj.mask, traj.returns - baseline, 0.0) / n
    policy_backward(params, traj, cache, advantage)
    return float(-(advantage * traj.log_probs).sum())


def generator_update(gen: GeneratorParams, opt: Adam, baseline: BaselineState,
                     traj: Trajectory, cache, gamma: float) -> tuple[BaselineState, float]:
    """Turns rewards already on ``traj`` into returns, updates the baseline and
    takes one Adam step on the generator."""
    traj.returns = discounted_returns(traj.rewards, gamma, traj.mask)
    mean_return = float(traj.returns[traj.mask].mean())
    baseline = baseline_update(baseline, mean_return)
    gen.zero_grad()
    pseudo = generator_gradient(traj, baseline.b, gen, cache)
    opt.step()
    return baseline, pseudo


@dataclasses.dataclass
class GanState:
    """Everything a training run mutates."""

    gen: GeneratorParams
    disc: DiscriminatorParams
    gen_opt: Adam
    disc_opt: Adam
    baseline: BaselineState
    rng: np.random.Generator
    step: int = 0

    @classmethod
    def create(cls, gen: GeneratorParams, disc: DiscriminatorParams, cfg: TrainConfig) -> "GanState":
        return cls(gen, disc, Adam(gen.blocks(), cfg.gen_lr), Adam(disc.blocks(), cfg.disc_lr),
                   BaselineState(0.0, cfg.baseline_lambda), np.random.default_rng(cfg.seed))


def train_step(state: GanState, real_batches, cfg: TrainConfig) -> dict:
    """Samples one batch, trains the discriminator on it against real data,
    then rewards the same samples with the updated discriminator."""
    sampler = SamplerConfig(1.0, cfg.max_len)
    traj, cache = sample_batch(state.gen, sampler, cfg.batch_size, rng=state.rng, keep_cache=True)
    disc_losses = []
    for k in range(cfg.disc_steps_per_gen_step):
        fake = traj.tokens if k == 0 else sample_batch(state.gen, sampler, cfg.batch_size, rng=state.rng).tokens
        state.disc.zero_grad()
        loss = disc_loss(next(real_batches), fake, state.disc, rng=state.rng, training=True)
        if not np.isfinite(loss):
            raise DivergenceError("non-finite discriminator loss", {"step": state.step, "disc_loss": loss})
        state.disc_opt.step(cfg.l2_weight)
        disc_losses.append(loss)
    scores = score_prefixes(traj.tokens, state.disc, training=False)
    traj.rewards = rewards_from_scores(scores, traj.mask)
    state.baseline, pseudo = generator_update(state.gen, state.gen_opt, state.baseline, traj, cache, cfg.gamma)
    if not np.isfinite(pseudo):
        raise DivergenceError("non-finite generator loss",
                              {"step": state.step, "gen_pseudo_loss": pseudo, "baseline": state.baseline.b})
    state.step += 1
    return {
        "step": state.step,
        "disc_loss": float(np.mean(disc_losses)),
        "gen_pseudo_loss": pseudo,
        "mean_reward": float(traj.rewards[traj.mask].mean()),
        "baseline": float(state.baseline.b),
        "mean_len": float(traj.lengths.mean()),
    }


def checkpoint_steps(total_steps: int, every: int) -> list[int]:
    """Multiples of ``every`` up to ``total_steps`` plus the final step."""
    steps = list(range(every, total_steps + 1, every))
    if total_steps > 0 and (not steps or steps[-1] != total_steps):
        steps.append(total_steps)
    return steps


def train_loop(state: GanState, train_tokens: np.ndarray, cfg: TrainConfig,
               evaluate: Callable[[GanState], float],
               on_checkpoint: Callable[[GanState, float], None] | None = None,
               on_metrics: Callable[[dict], None] | None = None) -> tuple[int, float, list[tuple[int, float]]]:
    """Runs ``cfg.total_steps`` steps, scoring each checkpoint with ``evaluate``
    (validation FED). Returns (best step, best score, all (step, score))."""
    batches = batch_iterator(train_tokens, cfg.batch_size, np.random.default_rng(cfg.seed + 1))
    wanted = set(checkpoint_steps(cfg.total_steps, cfg.checkpoint_every))
    history: list[tuple[int, float]] = []
    if cfg.total_steps == 0:
        score = float(evaluate(state))
        history.append((state.step, score))
        if on_checkpoint:
            on_checkpoint(state, score)
    while state.step < cfg.total_steps:
        metrics = train_step(state, batches, cfg)
        if on_metrics:
            on_metrics(metrics)
        if state.step in wanted:
            score = float(evaluate(state))
            history.append((state.step, score))
            log.info("step %d validation FED %.5f", state.step, score)
            if on_checkpoint:
                on_checkpoint(state, score)
    best_step, best_score = min(history, key=lambda sv: (sv[1], sv[0]))
    return best_step, best_score, history
