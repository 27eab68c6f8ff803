import math
from collections import Counter, defaultdict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scratchgan.baselines import (
    BOS,
    GeneratorLM,
    KneserNeyModel,
    MleLmConfig,
    fit_kn,
    kn_sample,
    kn_sample_sentences,
    train_mle,
)
from scratchgan.corpus import EOS_ID, PAD_ID, UNK_ID, build_vocab, encode_corpus
from scratchgan.generator import perplexity
from scratchgan.trainer import DivergenceError

corpora = st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=6), min_size=1, max_size=8)


def reference_kn(corpus, order, discount):
    """Textbook interpolated Kneser-Ney over strings; returns p(w | history)."""
    eos, bos = "</s>", "<s>"
    grams = defaultdict(Counter)  # grams[k][(h, w)] = raw count
    for s in corpus:
        seq = [bos] * (order - 1) + list(s) + [eos]
        for i in range(order - 1, len(seq)):
            for k in range(1, order + 1):
                grams[k][(tuple(seq[i - k + 1:i]), seq[i])] += 1
    cont = defaultdict(Counter)  # cont[k][(h, w)] = distinct left extensions of h + w
    for k in range(1, order):
        for (h, w) in grams[k + 1]:
            cont[k][(h[1:], w)] += 1
    types = sorted({w for s in corpus for w in s} | {eos, "<unk>"})

    def p(w, h, k):
        lower = 1.0 / len(types) if k == 1 else p(w, h[1:], k - 1)
        table = grams[k] if k == order else cont[k]
        seen = {ww: c for (hh, ww), c in table.items() if hh == h}
        if not seen:
            return lower
        total = sum(seen.values())
        return (max(seen.get(w, 0) - discount, 0) + discount * len(seen) * lower) / total

    def prob(w, history):
        h = tuple(([bos] * (order - 1) + list(history))[len(history):]) if order > 1 else ()
        return p(w, h, order)

    return prob


def test_hand_computed_bigram_table():
    kn = fit_kn([["a", "b"], ["a", "c"], ["b", "c"]], order=2, discount=0.75)
    ids = kn.vocab.token_to_id
    a, b, c = ids["a"], ids["b"], ids["c"]
    # continuation counts: a 1, b 2, c 2, EOS 2 over 7 bigram types; 4 types seen; uniform 1/5
    p1 = {a: 0.85 / 7, b: 1.85 / 7, c: 1.85 / 7, EOS_ID: 1.85 / 7, UNK_ID: 0.6 / 7}
    assert kn.prob(b, [a]) == pytest.approx((0.25 + 1.5 * p1[b]) / 2, rel=1e-12)
    assert kn.prob(a, []) == pytest.approx((1.25 + 1.5 * p1[a]) / 3, rel=1e-12)
    assert kn.prob(EOS_ID, [UNK_ID]) == pytest.approx(p1[EOS_ID], rel=1e-12)
    assert kn.prob(UNK_ID, [b]) == pytest.approx(0.75 * 2 * p1[UNK_ID] / 2, rel=1e-12)
    assert sum(p1.values()) == pytest.approx(1.0)


@given(corpora, st.integers(1, 4), st.floats(0.1, 0.9))
def test_matches_reference_formula(corpus, order, discount):
    kn = fit_kn(corpus, order, discount)
    ref = reference_kn(corpus, order, discount)
    history_pool = [[], ["a"], ["a", "b"], ["d", "d", "c"], ["c", "a", "b", "a"]]
    for history in history_pool:
        ids = kn.encode(history)
        for w in ["a", "b", "c", "d"]:
            if w in kn.vocab:
                assert kn.prob(kn.vocab.token_to_id[w], ids) == pytest.approx(ref(w, history), rel=1e-12)
        assert kn.prob(EOS_ID, ids) == pytest.approx(ref("</s>", history), rel=1e-12)


def test_normalization_over_random_contexts(grammar):
    kn = fit_kn(grammar.sample(500, 0), 5)
    rng = np.random.default_rng(0)
    for _ in range(100):
        history = list(rng.integers(2, len(kn.vocab), rng.integers(0, 6)))
        p = kn.next_distribution(history)
        assert abs(p.sum() - 1.0) < 1e-9
        assert p[PAD_ID] == 0.0 and np.all(p >= 0)
        assert sum(kn.prob(w, history) for w in range(len(kn.vocab))) == pytest.approx(1.0, abs=1e-9)


def test_unseen_context_falls_back_to_continuation_unigram():
    kn = fit_kn([["a", "b"], ["b", "a"]], order=3)
    unseen = [UNK_ID, UNK_ID]  # no context of any length ends in UNK
    np.testing.assert_array_equal(kn.next_distribution(unseen), kn.distribution(()))


@given(corpora)
def test_count_tables_are_consistent(corpus):
    kn = fit_kn(corpus, 4)
    for k in range(1, 4):
        for h, nxt in kn.counts[k].items():
            for w, c in nxt.items():
                if w == EOS_ID:
                    continue
                assert c == sum(kn.counts[k + 1][h + (w,)].values())


@given(corpora)
def test_small_discount_gives_relative_frequencies(corpus):
    kn = fit_kn(corpus, 3, discount=1e-9)
    for h, nxt in kn.counts[3].items():
        total = sum(nxt.values())
        for w, c in nxt.items():
            history = [x for x in h if x != BOS]
            assert kn.prob(w, history) == pytest.approx(c / total, abs=1e-6)


def test_single_sentence_corpus_samples_that_sentence():
    # interpolation always leaks discount mass, so determinism holds in the small-discount limit
    kn = fit_kn([["a", "b"]], order=5, discount=1e-6)
    assert all(s == ["a", "b"] for s in kn_sample_sentences(kn, 500, 10, seed=1))
    kn = fit_kn([["a", "b"]], order=5)
    samples = kn_sample_sentences(kn, 500, 10, seed=1)
    assert Counter(map(tuple, samples)).most_common(1)[0][0] == ("a", "b")


def test_bigram_frequencies_match_conditionals():
    kn = fit_kn([["a", "b"], ["a", "c", "a"], ["b", "c"], ["c"]], order=2)
    rng = np.random.default_rng(0)
    a = kn.vocab.token_to_id["a"]
    n, follow = 0, Counter()
    for _ in range(100_000):
        seq = kn_sample(kn, 2, rng)
        if seq.ids[0] == a:
            n += 1
            follow[int(seq.ids[1])] += 1
    p = kn.next_distribution([a])
    for w in range(1, len(kn.vocab)):
        sigma = math.sqrt(p[w] * (1 - p[w]) / n)
        assert abs(follow[w] / n - p[w]) <= 3 * sigma + 1e-12


def test_unseen_top_order_grams_come_from_backoff_mass(grammar):
    kn = fit_kn(grammar.sample(300, 0), 5)
    seen = {h + (w,) for h, nxt in kn.counts[5].items() for w in nxt}
    rng = np.random.default_rng(1)
    unseen = 0
    for _ in range(300):
        seq = kn_sample(kn, 20, rng)
        ids = [BOS] * 4 + list(seq.ids[:seq.length]) + ([EOS_ID] if seq.length < 20 else [])
        for i in range(4, len(ids)):
            gram = tuple(ids[i - 4:i + 1])
            if gram in seen:
                continue
            unseen += 1
            h = gram[:4]
            history = [x for x in h if x != BOS]
            p = kn.prob(gram[-1], history)
            if h in kn.counts[5]:
                nxt = kn.counts[5][h]
                assert 0 < p <= kn.discount * len(nxt) / sum(nxt.values())
    assert unseen > 0


def test_serialization_roundtrip(tmp_path, grammar):
    kn = fit_kn(grammar.sample(100, 0), 4, 0.6)
    again = KneserNeyModel.loads(kn.dumps())
    assert again.dumps() == kn.dumps()
    h = kn.encode(["the"])
    np.testing.assert_array_equal(again.next_distribution(h), kn.next_distribution(h))
    kn.save(tmp_path / "m.counts")
    assert KneserNeyModel.load(tmp_path / "m.counts").dumps() == kn.dumps()
    with pytest.raises(ValueError):
        KneserNeyModel.loads("something else\n")
    with pytest.raises(ValueError):
        KneserNeyModel.loads("kneser-ney-counts 99\n")


def test_fit_kn_errors():
    with pytest.raises(ValueError):
        fit_kn([])
    with pytest.raises(ValueError):
        fit_kn([["a"]], order=0)
    with pytest.raises(ValueError):
        fit_kn([["a"]], discount=1.0)


def test_kn_perplexity_is_exp_nll(grammar):
    kn = fit_kn(grammar.sample(200, 0), 3)
    valid = grammar.sample(20, 1)
    total = -sum(kn.sentence_log_prob(kn.encode(s)) for s in valid)
    count = sum(len(s) + 1 for s in valid)
    assert kn.perplexity(valid) == pytest.approx(math.exp(total / count), rel=1e-12)


def test_mle_memorizes_a_single_sentence():
    corpus = [["x", "y", "z", "w"]] * 8
    vocab = build_vocab(corpus)
    ids = encode_corpus(vocab, corpus, 6)
    result = train_mle(ids, ids, len(vocab), MleLmConfig(lstm_size=16, embedding_size=8, embedding_dropout=0.0,
                                                         lr=1e-2, batch_size=8, total_steps=300,
                                                         checkpoint_every=50))
    assert result.best_perplexity < 1.05


def test_mle_beats_uniform_and_loss_falls(desk_paths):
    from scratchgan.corpus import read_corpus

    train, valid = read_corpus(desk_paths["train"]), read_corpus(desk_paths["valid"])
    vocab = build_vocab(train)
    tr, va = encode_corpus(vocab, train, 20), encode_corpus(vocab, valid, 20)
    result = train_mle(tr, va, len(vocab), MleLmConfig(total_steps=300, checkpoint_every=100))
    assert result.best_perplexity < len(vocab)
    windows = np.array(result.losses).reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(windows) < 0)
    assert result.history[0][0] == 0 and result.best_step in [s for s, _ in result.history]
    # the language model and the generator share one scoring path
    lm = GeneratorLM(result.params, vocab, 20)
    assert math.exp(lm.nll_per_token(valid)) == pytest.approx(perplexity(va, result.params), rel=1e-12)


def test_mle_rejects_bad_inputs():
    with pytest.raises(ValueError):
        MleLmConfig(lstm_size=0)
    with pytest.raises(ValueError):
        train_mle(np.zeros((0, 3), dtype=int), np.zeros((1, 3), dtype=int), 5, MleLmConfig())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mle_divergence_is_reported():
    ids = np.array([[3, 4, EOS_ID]] * 4)
    with pytest.raises(DivergenceError):
        train_mle(ids, ids, 5, MleLmConfig(lr=1e300, total_steps=20, batch_size=4))
