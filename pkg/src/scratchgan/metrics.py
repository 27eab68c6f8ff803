"""Sample-quality metrics: BLEU / Self-BLEU, Frechet embedding distance,
LM / reverse-LM scores, temperature sweeps, n-gram overlap and neighbours."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from collections import Counter, defaultdict
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .corpus import UNK_ID, IngestionError, Vocabulary

log = logging.getLogger(__name__)

Sentence = Sequence[str]

METRIC_REGISTRY = frozenset(
    [f"bleu_{n}" for n in range(1, 6)]
    + [f"self_bleu_{n}" for n in range(1, 6)]
    + ["fed", "lm_score", "rlm_score", "perplexity", "mean_length", "reference_mean_length",
       "num_samples", "num_reference"]
)


# -- BLEU ----------------------------------------------------------------------

def _ngrams(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


class _ReferenceIndex:
    """Per-order maximum reference counts, with the runner-up kept so a single
    reference can be left out cheaply."""

    def __init__(self, references: Sequence[Sentence], max_n: int):
        if not references:
            raise ValueError("BLEU needs at least one reference")
        self.references = references
        self.lengths = np.array([len(r) for r in references])
        self.sorted_lengths = np.unique(self.lengths)
        self.best: list[dict] = []
        for n in range(1, max_n + 1):
            table: dict[tuple, list] = {}
            for idx, ref in enumerate(references):
                for gram, c in _ngrams(ref, n).items():
                    entry = table.get(gram)
                    if entry is None:
                        table[gram] = [c, idx, 0]
                    elif c > entry[0]:
                        table[gram] = [c, idx, entry[0]]
                    elif c > entry[2]:
                        entry[2] = c
            self.best.append(table)
        self._length_counts = Counter(self.lengths.tolist())

    def max_count(self, n: int, gram: tuple, exclude: int | None) -> int:
        entry = self.best[n - 1].get(gram)
        if entry is None:
            return 0
        return entry[2] if exclude is not None and entry[1] == exclude else entry[0]

    def closest_length(self, length: int, exclude: int | None) -> int:
        lengths = self.sorted_lengths
        if exclude is not None and self._length_counts[int(self.lengths[exclude])] == 1:
            lengths = lengths[lengths != self.lengths[exclude]]
            if lengths.size == 0:
                return length
        # ties go to the shorter reference
        return int(min(lengths, key=lambda r: (abs(int(r) - length), r)))


def _bleu_from_stats(matches: np.ndarray, totals: np.ndarray, cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    logs = []
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1  # add-one smoothing on zero-match orders
        if t == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(sum(logs) / len(logs))


def _candidate_stats(cand: Sentence, index: _ReferenceIndex, n: int, exclude: int | None):
    matches = np.zeros(n, dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)
    for k in range(1, n + 1):
        grams = _ngrams(cand, k)
        totals[k - 1] = sum(grams.values())
        matches[k - 1] = sum(min(c, index.max_count(k, g, exclude)) for g, c in grams.items())
    return matches, totals, len(cand), index.closest_length(len(cand), exclude)


def bleu_n(candidates: Sequence[Sentence], references: Sequence[Sentence], n: int = 4,
           _index: _ReferenceIndex | None = None, _exclude: Sequence[int | None] | None = None) -> float:
    """Corpus-level BLEU with clipped n-gram precisions for orders 1..n, uniform
    weights, brevity penalty and add-one smoothing on zero-match orders."""
    if not candidates or not references:
        raise ValueError("BLEU needs non-empty candidate and reference sets")
    if n < 1:
        raise ValueError("n must be >= 1")
    index = _index or _ReferenceIndex(references, n)
    matches = np.zeros(n, dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)
    c_len = r_len = 0
    for i, cand in enumerate(candidates):
        m, t, cl, rl = _candidate_stats(cand, index, n, None if _exclude is None else _exclude[i])
        matches += m
        totals += t
        c_len += cl
        r_len += rl
    return _bleu_from_stats(matches, totals, c_len, r_len)


def mean_sentence_bleu(candidates: Sequence[Sentence], references: Sequence[Sentence], n: int = 5,
                       leave_one_out: bool = False) -> float:
    """Average of per-candidate BLEU against the whole reference set.

    With ``leave_one_out`` candidate ``i`` is scored without reference ``i``
    (the sets must then be the same list), which is how a corpus is scored
    against itself.
    """
    if not candidates or not references:
        raise ValueError("BLEU needs non-empty candidate and reference sets")
    if leave_one_out and len(candidates) != len(references):
        raise ValueError("leave-one-out BLEU needs index-aligned candidates and references")
    index = _ReferenceIndex(references, n)
    scores = [bleu_n([c], references, n, _index=index, _exclude=[i if leave_one_out else None])
              for i, c in enumerate(candidates)]
    return float(np.mean(scores))


def self_bleu(samples: Sequence[Sentence], n: int = 5, max_samples: int | None = None,
              seed: int = 0) -> float:
    """Mean over samples of BLEU-n of that sample against all other samples.

    ``max_samples`` scores a seeded random subset of candidates (references
    stay complete) to bound the cost on large sets.
    """
    if len(samples) < 2:
        raise ValueError("Self-BLEU needs at least two samples")
    index = _ReferenceIndex(samples, n)
    which = range(len(samples))
    if max_samples is not None and max_samples < len(samples):
        which = sorted(np.random.default_rng(seed).choice(len(samples), max_samples, replace=False))
    scores = [bleu_n([samples[i]], samples, n, _index=index, _exclude=[i]) for i in which]
    return float(np.mean(scores))


# -- sentence embeddings -------------------------------------------------------

@dataclasses.dataclass
class EmbeddingSet:
    vectors: np.ndarray
    embedder_id: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("embedding set must be n x d")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding set contains non-finite entries")
        n, d = self.vectors.shape
        if n < d + 1:
            log.warning("only %d embeddings for dimension %d: covariance is rank deficient", n, d)


class Embedder(Protocol):
    embedder_id: str

    def __call__(self, sentences: Sequence[Sentence]) -> np.ndarray: ...


class MeanWordEmbedder:
    """Average of frozen word vectors over known tokens; zero vector when a
    sentence has none. Word order is ignored."""

    def __init__(self, vocab: Vocabulary, table: np.ndarray, name: str = "pretrained"):
        self.vocab = vocab
        self.table = np.asarray(table, dtype=np.float64)
        self.embedder_id = f"mean-word-embedding:{name}:d{self.table.shape[1]}"

    def __call__(self, sentences: Sequence[Sentence]) -> np.ndarray:
        out = np.zeros((len(sentences), self.table.shape[1]))
        for i, s in enumerate(sentences):
            ids = [j for j in self.vocab.encode(s) if j != UNK_ID]
            if ids:
                out[i] = self.table[ids].mean(axis=0)
        return out


class PrecomputedEmbedder:
    """Reads ``index v_1 ... v_d`` lines; sentence ``i`` maps to the row with index ``i``."""

    def __init__(self, path: str | os.PathLike, name: str | None = None):
        rows: dict[int, np.ndarray] = {}
        with open(path, "rb") as fh:
            for number, raw in enumerate(fh, start=1):
                parts = raw.split()
                if not parts:
                    continue
                try:
                    rows[int(parts[0])] = np.array([float(v) for v in parts[1:]])
                except ValueError:
                    raise IngestionError("malformed precomputed embedding row", number) from None
        self.rows = rows
        self.embedder_id = f"precomputed:{name or os.path.basename(str(path))}"

    def __call__(self, sentences: Sequence[Sentence]) -> np.ndarray:
        missing = [i for i in range(len(sentences)) if i not in self.rows]
        if missing:
            raise IngestionError(f"no precomputed embedding for sentence index {missing[0]}")
        return np.stack([self.rows[i] for i in range(len(sentences))])


def embed_sentences(sentences: Sequence[Sentence], embedder: Embedder) -> EmbeddingSet:
    return EmbeddingSet(embedder(sentences), embedder.embedder_id)


# -- Frechet distance ------------------------------------------------------------

@dataclasses.dataclass
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "GaussianSummary":
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape[0] < 2:
            raise ValueError("need at least two embeddings to fit a covariance")
        cov = np.cov(vectors, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        return cls(vectors.mean(axis=0), 0.5 * (cov + cov.T))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    _warn_negative(w, mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _warn_negative(eigvals: np.ndarray, mat: np.ndarray) -> None:
    scale = max(float(np.trace(mat)), 0.0)
    if eigvals.size and eigvals.min() < -1e-6 * scale:
        log.warning("clamping eigenvalue %.3g of a matrix with trace %.3g", eigvals.min(), scale)


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the cross term
    evaluated as the trace of sqrt(S_a^(1/2) S_b S_a^(1/2))."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("Gaussians of different dimension")
    root_a = _psd_sqrt(a.covariance)
    middle = root_a @ b.covariance @ root_a
    w = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    _warn_negative(w, middle)
    cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)
    return max(value, 0.0)


def fed(a: EmbeddingSet | np.ndarray, b: EmbeddingSet | np.ndarray) -> float:
    va = a.vectors if isinstance(a, EmbeddingSet) else np.asarray(a, dtype=np.float64)
    vb = b.vectors if isinstance(b, EmbeddingSet) else np.asarray(b, dtype=np.float64)
    if va.ndim == 1:
        va, vb = va[:, None], np.asarray(vb, dtype=np.float64)[:, None]
    if not (np.isfinite(va).all() and np.isfinite(vb).all()):
        raise ValueError("non-finite embeddings")
    if va.shape[1] != vb.shape[1]:
        raise ValueError("embedding sets of different dimension")
    return frechet_distance(GaussianSummary.fit(va), GaussianSummary.fit(vb))


# -- language-model scores -----------------------------------------------------

class LanguageModel(Protocol):
    def nll_per_token(self, sentences: Sequence[Sentence]) -> float: ...


def lm_rlm_scores(samples: Sequence[Sentence], real_validation: Sequence[Sentence],
                  lm_train_fn: Callable[[Sequence[Sentence]], LanguageModel],
                  real_lm: LanguageModel, min_samples: int = 50) -> tuple[float, float]:
    """(LM score, reverse-LM score) as per-token NLL in nats.

    The LM score rates samples under ``real_lm`` (quality); the reverse score
    rates real validation text under a model freshly fit to the samples
    (diversity).
    """
    if len(samples) < min_samples:
        raise ValueError(f"need at least {min_samples} samples to fit the reverse LM, got {len(samples)}")
    lm_score = real_lm.nll_per_token(samples)
    reverse = lm_train_fn(samples)
    return float(lm_score), float(reverse.nll_per_token(real_validation))


# -- reports -------------------------------------------------------------------

@dataclasses.dataclass
class MetricReport:
    model_id: str
    checkpoint_step: int
    temperature: float
    values: dict[str, float]
    provenance: dict[str, str] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - METRIC_REGISTRY
        if unknown:
            raise ValueError(f"unregistered metric names: {sorted(unknown)}")
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite metric values: {bad}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricReport":
        return cls(**json.loads(line))

    def rows(self) -> list[tuple]:
        return [(self.model_id, self.checkpoint_step, self.temperature, k, self.values[k])
                for k in sorted(self.values)]


def write_reports(path: str | os.PathLike, reports: Iterable[MetricReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def write_report_csv(path: str | os.PathLike, reports: Iterable[MetricReport]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model_id", "checkpoint_step", "temperature", "metric", "value"])
        for r in reports:
            w.writerows(r.rows())


def temperature_sweep(sample_fn: Callable[[float, int], list[Sentence]], temps: Sequence[float],
                      metric_fns: dict[str, Callable[[list[Sentence]], float]], model_id: str = "model",
                      checkpoint_step: int = 0, seed: int = 0,
                      provenance: dict[str, str] | None = None,
                      skip_errors: bool = False) -> list[MetricReport]:
    """One report per temperature; ``sample_fn(temperature, seed)`` draws the
    samples and every temperature reuses the same seed.

    With ``skip_errors`` a metric that raises is left out of that report and
    its message is recorded under ``provenance["errors"]``.
    """
    if any(not t > 0 for t in temps):
        raise ValueError("temperatures must be positive")
    reports = []
    for temp in temps:
        samples = sample_fn(temp, seed)
        values, errors = {}, []
        for name, fn in metric_fns.items():
            try:
                value = float(fn(samples))
                if not math.isfinite(value):
                    raise ValueError(f"non-finite value {value}")
                values[name] = value
            except Exception as exc:
                if not skip_errors:
                    raise
                log.warning("metric %s failed at temperature %g: %s", name, temp, exc)
                errors.append(f"{name}: {exc}")
        prov = dict(provenance or {})
        if errors:
            prov["errors"] = "; ".join(errors)
        reports.append(MetricReport(model_id, checkpoint_step, float(temp), values, prov))
    return reports


# -- overlap with the training set --------------------------------------------

class NgramIndex:
    """Lazily built sets of every n-gram in a corpus, one set per n."""

    def __init__(self, corpus: Sequence[Sentence]):
        self.corpus = [tuple(s) for s in corpus]
        self._sets: dict[int, set] = {}

    def contains(self, gram: tuple) -> bool:
        n = len(gram)
        if n not in self._sets:
            self._sets[n] = {s[i:i + n] for s in self.corpus for i in range(len(s) - n + 1)}
        return gram in self._sets[n]

    def longest_match(self, sentence: Sentence) -> int:
        s = tuple(sentence)
        best = 0
        # a match of length n implies matches of every shorter length
        while best < len(s) and any(self.contains(s[i:i + best + 1]) for i in range(len(s) - best)):
            best += 1
        return best


def longest_match_histogram(samples: Sequence[Sentence], training_corpus: Sequence[Sentence] | NgramIndex
                            ) -> dict[int, int]:
    """Histogram over the length of each sample's longest token run that occurs
    verbatim in some training sentence."""
    if not samples:
        raise ValueError("no samples")
    index = training_corpus if isinstance(training_corpus, NgramIndex) else NgramIndex(training_corpus)
    hist: dict[int, int] = defaultdict(int)
    for s in samples:
        hist[index.longest_match(s)] += 1
    return dict(sorted(hist.items()))


# -- nearest neighbours ---------------------------------------------------------

def _cosine_counts(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(c * b.get(g, 0) for g, c in a.items())
    if dot == 0:
        return 0.0
    return dot / math.sqrt(sum(c * c for c in a.values()) * sum(c * c for c in b.values()))


class NeighbourIndex:
    def __init__(self, training_corpus: Sequence[Sentence], embedder: Embedder | None = None, n: int = 3):
        self.corpus = list(training_corpus)
        self.n = n
        self.grams = [_ngrams(s, n) for s in self.corpus]
        self.postings: dict[tuple, list[int]] = defaultdict(list)
        for i, g in enumerate(self.grams):
            for gram in g:
                self.postings[gram].append(i)
        self.embedder = embedder
        self.unit = None
        if embedder is not None:
            vecs = embedder(self.corpus)
            norms = np.linalg.norm(vecs, axis=1, keepdims=True)
            self.unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)

    def by_ngram(self, sample: Sentence, k: int) -> list[tuple[int, float]]:
        q = _ngrams(sample, self.n)
        candidates = sorted({i for g in q for i in self.postings.get(g, ())})
        scored = [(i, _cosine_counts(q, self.grams[i])) for i in candidates]
        if len(scored) < k:
            seen = set(candidates)
            scored += [(i, 0.0) for i in range(len(self.corpus)) if i not in seen][:k - len(scored)]
        scored.sort(key=lambda p: (-p[1], p[0]))
        return scored[:k]

    def by_embedding(self, sample: Sentence, k: int) -> list[tuple[int, float]]:
        if self.unit is None:
            raise ValueError("no embedder configured")
        v = self.embedder([sample])[0]
        norm = np.linalg.norm(v)
        sims = self.unit @ (v / norm) if norm > 0 else np.zeros(len(self.corpus))
        order = np.lexsort((np.arange(len(sims)), -sims))[:k]
        return [(int(i), float(sims[i])) for i in order]


def nearest_neighbors(sample: Sentence, training_corpus: Sequence[Sentence] | NeighbourIndex, k: int = 3,
                      embedder: Embedder | None = None):
    """Top-``k`` training sentences by 3-gram count cosine and by embedding
    cosine, each as ``[(index, score), ...]`` best first (ties by index)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    index = training_corpus if isinstance(training_corpus, NeighbourIndex) \
        else NeighbourIndex(training_corpus, embedder)
    return index.by_ngram(sample, k), index.by_embedding(sample, k)
