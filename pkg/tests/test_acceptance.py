"""Acceptance gate. Each test checks one criterion at its stated tolerance
and records a PASS/FAIL line, printed together at the end of the session."""

import time

import numpy as np
import pytest

from scratchgan.baselines import fit_kn, kn_sample_sentences, train_mle
from scratchgan.cli import main, mle_config
from scratchgan.config import load_config
from scratchgan.corpus import EOS_ID, PAD_ID
from scratchgan.discriminator import disc_loss, init_discriminator
from scratchgan.experiment import length_l1, prepare_data, run_gan, sample_sentences, validation_fed
from scratchgan.generator import init_generator, nll_and_grad, perplexity
from scratchgan.metrics import fed, mean_sentence_bleu, self_bleu
from scratchgan.numeric import (
    ParamBlock,
    finite_difference_check,
    init_lstm_params,
    layer_norm_backward,
    layer_norm_forward,
    lstm_cell_backward,
    lstm_cell_forward,
)
from scratchgan.synthetic import make_desk_corpus
from scratchgan.toy import (
    enumerate_language,
    expected_policy_gradient,
    gradient_variance,
    loglog_slope,
    mle_gradient,
    sequence_probs,
    tiny_generator,
)
from scratchgan.trainer import BaselineState, baseline_update, discounted_returns, rewards_from_scores

slow = pytest.mark.slow


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Full desk-scale corpus (10k train, 2k validation) and its config overrides."""
    paths = make_desk_corpus(tmp_path_factory.mktemp("desk-full"), n_train=10000, n_valid=2000, seed=0)
    sets = [f"train_path={paths['train']}", f"valid_path={paths['valid']}",
            f"embedding_path={paths['embeddings']}"]
    cfg = load_config("desk", sets)
    return cfg, prepare_data(cfg), sets


@pytest.fixture(scope="module")
def desk_runs(desk):
    """Full desk.cfg GAN runs, shared between criteria that need the same (seed, positional) run."""
    cfg, data, _ = desk
    cache = {}

    def get(seed, positional=True):
        if (seed, positional) not in cache:
            cache[seed, positional] = run_gan(cfg.replace(seed=seed, positional=positional), data)
        return cache[seed, positional]

    return get


def test_criterion_1_gradients(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}

    x = ParamBlock("x", rng.normal(size=(3, 5)))
    gain, bias = ParamBlock("g", rng.normal(1.0, 0.2, (1, 5))), ParamBlock("b", rng.normal(size=(1, 5)))
    w = rng.normal(size=(3, 5))

    def ln_loss():
        y, cache = layer_norm_forward(x.value, gain.value, bias.value)
        dx, dg, db = layer_norm_backward(w, cache)
        x.grad += dx
        gain.grad += dg
        bias.grad += db
        return float((w * y).sum())

    errors["layer_norm"] = finite_difference_check(ln_loss, [x, gain, bias])

    for use_ln in (False, True):
        params = init_lstm_params("cell", 4, 3, rng, layer_norm=use_ln)
        xi, h, c = (ParamBlock(n, rng.normal(size=(2, d))) for n, d in (("x", 4), ("h", 3), ("c", 3)))
        wh, wc = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))

        def cell_loss():
            h2, c2, cache = lstm_cell_forward(xi.value, h.value, c.value, params)
            dx, dh, dc = lstm_cell_backward(wh, wc, cache, params)
            xi.grad += dx
            h.grad += dh
            c.grad += dc
            return float((wh * h2).sum() + (wc * c2).sum())

        errors[f"lstm_cell(layer_norm={use_ln})"] = finite_difference_check(cell_loss, [xi, h, c, *params.values()])

    gen = init_generator(rng.normal(size=(6, 3)), 2, 4, 2, rng)
    tokens = np.array([[3, 4, EOS_ID, PAD_ID], [5, 5, 3, 4]])
    weights = np.array([[0.5, -1.0, 2.0, 0.0], [1.0, 0.3, -0.7, 1.1]])
    errors["generator"] = finite_difference_check(lambda: nll_and_grad(gen, tokens, weights), gen.blocks())

    real = np.array([[3, 4, 5, EOS_ID, PAD_ID], [6, 3, EOS_ID, PAD_ID, PAD_ID]])
    fake = np.array([[5, 5, 5, 5, 5], [4, EOS_ID, PAD_ID, PAD_ID, PAD_ID]])
    for positional, layers in ((True, 1), (False, 2)):
        disc = init_discriminator(rng.normal(size=(7, 3)), 2, 4, layers, rng, max_len=6, positional=positional)
        errors[f"discriminator(positional={positional})"] = finite_difference_check(
            lambda: disc_loss(real, fake, disc, training=False), disc.blocks())

    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    acceptance(1, errors[worst] < 1e-4 and elapsed < 60,
               f"worst FD rel. error {errors[worst]:.2e} ({worst}) over {len(errors)} checks, {elapsed:.1f}s")


def test_criterion_2_mle_identity(acceptance):
    gen = tiny_generator(3, seed=4)
    outcomes = enumerate_language(3, 2)
    p = sequence_probs(outcomes, gen)
    target = np.random.default_rng(5).dirichlet(np.ones(len(outcomes)))
    pg = expected_policy_gradient(gen, outcomes, target / p)
    mle = mle_gradient(gen, outcomes, target)
    rel = float((np.abs(pg - mle) / np.abs(mle)).max())
    acceptance(2, rel < 1e-8, f"max component rel. error {rel:.2e} over {len(outcomes)} sequences")


def test_criterion_3_return_and_reward_oracles(acceptance):
    rng = np.random.default_rng(0)
    worst_return = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 12))
        r, gamma = rng.uniform(-1, 1, T), float(rng.uniform(0, 1))
        brute = np.array([sum(gamma ** (k - t) * r[k] for k in range(t, T)) for t in range(T)])
        worst_return = max(worst_return, float(np.abs(discounted_returns(r, gamma) - brute).max()))
    rewards = rewards_from_scores(rng.uniform(0, 1, (200, 20)))
    bounded = bool(np.all(np.abs(rewards) <= 1.0))
    worst_base = 0.0
    for _ in range(1000):
        b, lam, mean = rng.normal(), float(rng.uniform(0, 1)), rng.normal()
        worst_base = max(worst_base, abs(baseline_update(BaselineState(b, lam), mean).b - (lam * b + (1 - lam) * mean)))
    acceptance(3, worst_return <= 1e-12 and bounded and worst_base <= 1e-12,
               f"returns max err {worst_return:.1e}, rewards bounded {bounded}, baseline max err {worst_base:.1e}")


def test_criterion_4_fed(acceptance):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 6))
    identity = abs(fed(x, x))
    # exactly whitened samples give exact per-axis moments
    z = rng.normal(size=(400, 3))
    z -= z.mean(0)
    z = z @ np.linalg.inv(np.linalg.cholesky(np.cov(z, rowvar=False)).T)
    mu1, s1, mu2, s2 = rng.normal(size=3), rng.uniform(0.5, 2, 3), rng.normal(size=3), rng.uniform(0.5, 2, 3)
    closed = float(((mu1 - mu2) ** 2).sum() + ((s1 - s2) ** 2).sum())
    diag = abs(fed(mu1 + z * s1, mu2 + z * s2) - closed)
    a, b = rng.normal(size=(300, 5)), rng.normal(0.5, 1.5, (300, 5)) @ rng.normal(size=(5, 5))
    sym = abs(fed(a, b) - fed(b, a))
    acceptance(4, identity <= 1e-8 and diag <= 1e-6 and sym <= 1e-8,
               f"fed(X,X) {identity:.1e}, diagonal closed-form err {diag:.1e}, asymmetry {sym:.1e}")


def test_criterion_5_uniform_perplexity(acceptance):
    vocab = 1000
    gen = init_generator(np.zeros((vocab, 2)), 2, 3, 1, np.random.default_rng(0))
    gen.output_proj.value[...] = 0.0
    rng = np.random.default_rng(1)
    tokens = rng.integers(2, vocab, (50, 12))
    tokens[np.arange(50), rng.integers(0, 12, 50)] = EOS_ID
    for row in tokens:
        row[np.argmax(row == EOS_ID) + 1:] = PAD_ID
    ppl = perplexity(tokens, gen)
    acceptance(5, abs(ppl - vocab) <= 1e-6, f"uniform-model perplexity {ppl:.9f} at V={vocab}")


@slow
def test_criterion_6_kneser_ney_pathology(acceptance, desk):
    cfg, data, _ = desk
    start = time.perf_counter()
    kn = fit_kn(data.train, cfg.kn_order, cfg.kn_discount)
    kn_samples = kn_sample_sentences(kn, 10000, cfg.max_len, seed=0)
    kn_bleu = 100 * mean_sentence_bleu(kn_samples, data.train, 5)
    train_bleu = 100 * self_bleu(data.train, 5, max_samples=None)
    gap = abs(kn_bleu - train_bleu)

    mle = train_mle(data.train_ids, data.valid_ids, len(data.vocab), mle_config(cfg), pretrained=data.pretrained)
    n = len(data.valid)
    ref = data.valid_embeddings(n)
    kn_fed = fed(data.embedder(kn_samples[:n]), ref)
    mle_fed = fed(data.embedder(sample_sentences(mle.params, data.vocab, n, cfg.max_len, seed=0)), ref)
    elapsed = time.perf_counter() - start
    acceptance(6, gap <= 1.0 and kn_fed >= 2 * mle_fed and elapsed < 600,
               f"BLEU-5 KN {kn_bleu:.2f} vs training data {train_bleu:.2f} (gap {gap:.2f}); "
               f"FED KN {kn_fed:.4f} vs MLE {mle_fed:.4f} ({kn_fed / mle_fed:.2f}x); {elapsed:.0f}s")


@slow
def test_criterion_7_adversarial_training_from_scratch(acceptance, desk, desk_runs):
    cfg, data, _ = desk
    real_len = float(np.mean([len(s) for s in data.valid]))
    start = time.perf_counter()
    rows, passed = [], 0
    for seed in (0, 1, 2):
        result = desk_runs(seed)
        samples = sample_sentences(result.best_gen, data.vocab, cfg.eval_samples, cfg.max_len, seed=seed)
        ratio = result.best_fed / result.initial_fed
        sb3 = self_bleu(samples, 3)
        rel_len = abs(np.mean([len(s) for s in samples]) - real_len) / real_len
        ok = ratio <= 0.1 and sb3 < 0.95 and rel_len <= 0.15
        passed += ok
        rows.append(f"seed {seed}: FED ratio {ratio:.3f}, Self-BLEU-3 {sb3:.3f}, length err {rel_len:.3f}")
    elapsed = time.perf_counter() - start
    acceptance(7, passed == 3 and elapsed <= 1800, f"{passed}/3 seeds; " + "; ".join(rows) + f"; {elapsed:.0f}s")


@slow
def test_criterion_8_batch_size_axis(acceptance, desk):
    sizes = [8, 32, 128, 256]
    var = gradient_variance(tiny_generator(6, seed=0), sizes, repeats=200, target=4)
    slope = loglog_slope(sizes, var)
    cfg, data, _ = desk
    wins, rows = 0, []
    for seed in range(5):
        final = {}
        for batch in (8, 256):
            run_cfg = cfg.replace(seed=seed, batch_size=batch, total_steps=BATCH_AXIS_STEPS,
                                  checkpoint_every=BATCH_AXIS_STEPS)
            final[batch] = validation_fed(run_gan(run_cfg, data).state.gen, data, cfg.fed_samples, cfg.max_len)
        wins += final[256] <= final[8]
        rows.append(f"{final[8]:.3f}/{final[256]:.3f}")
    acceptance(8, -1.2 <= slope <= -0.8 and wins >= 4,
               f"variance slope {slope:.3f}; FED batch 8/256 per seed {' '.join(rows)}; batch 256 no worse in {wins}/5")


BATCH_AXIS_STEPS = 300


@slow
def test_criterion_9_positional_features(acceptance, desk, desk_runs):
    # each setting is judged by the model desk.cfg training selects (best validation FED)
    cfg, data, _ = desk
    wins, rows = 0, []
    for seed in range(5):
        l1 = {}
        for positional in (True, False):
            samples = sample_sentences(desk_runs(seed, positional).best_gen, data.vocab, cfg.eval_samples,
                                       cfg.max_len, seed=seed)
            l1[positional] = length_l1(samples, data.valid, cfg.max_len)
        wins += l1[True] < l1[False]
        rows.append(f"{l1[True]:.3f}/{l1[False]:.3f}")
    acceptance(9, wins >= 4, f"length-histogram L1 with/without positional per seed {' '.join(rows)}; "
                             f"positional better in {wins}/5")


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@slow
def test_criterion_10_determinism(acceptance, desk, tmp_path):
    _, _, sets = desk
    tiny = sets + ["total_steps=60", "checkpoint_every=20", "fed_samples=200", "mle_steps=60",
                   "mle_checkpoint_every=20", "eval_samples=200"]
    flags = [x for s in tiny for x in ("--set", s)]

    def commands(root):
        yield ["train-gan", "--config", "desk", *flags, "--out", str(root / "gan")]
        yield ["train-mle", "--config", "desk", *flags, "--out", str(root / "mle")]
        yield ["train-ngram", "--config", "desk", *flags, "--out", str(root / "kn")]
        yield ["sample", "--checkpoint", str(root / "gan" / "step-60.ckpt"), "--count", "300", "--seed", "5",
               "--output", str(root / "samples.txt")]
        yield ["eval", "--config", "desk", *flags, "--checkpoint", str(root / "gan" / "step-60.ckpt"),
               "--temps", "0.8,1.0", "--out", str(root / "eval")]
        yield ["nn-report", "--config", "desk", *flags, "--samples", str(root / "samples.txt"), "--k", "2",
               "--out", str(root / "nn")]

    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        codes = [main(cmd) for cmd in commands(root)]
        assert codes == [0] * len(codes), codes
        outputs.append(_tree(root))
    # sample paths differ between the two trees only through the run directory names
    differing = sorted(k for k in outputs[0] if outputs[0][k].replace(b"/a/", b"/b/") != outputs[1].get(k))
    acceptance(10, not differing and outputs[0].keys() == outputs[1].keys(),
               f"{len(outputs[0])} output files across 6 commands identical on rerun; differing: {differing or 'none'}")
