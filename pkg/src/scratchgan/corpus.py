"""Corpus ingestion, vocabulary, padding conventions and embedding files."""

from __future__ import annotations

import dataclasses
import os
from collections import Counter
from typing import Iterator, Sequence

import numpy as np

from .numeric import ParamBlock

PAD_ID, EOS_ID, UNK_ID = 0, 1, 2
PAD_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<eos>", "<unk>"
RESERVED_TOKENS = (PAD_TOKEN, EOS_TOKEN, UNK_TOKEN)


class IngestionError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def tokenize(line, lowercase: bool = False, line_number: int | None = None) -> list[str]:
    if isinstance(line, (bytes, bytearray)):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestionError(f"invalid UTF-8 ({exc.reason})", line_number) from None
    if lowercase:
        line = line.lower()
    return line.split()


def read_corpus(path: str | os.PathLike, lowercase: bool = False) -> list[list[str]]:
    """One sentence per line; blank lines are skipped."""
    sentences = []
    with open(path, "rb") as fh:
        for number, raw in enumerate(fh, start=1):
            tokens = tokenize(raw, lowercase, number)
            if tokens:
                sentences.append(tokens)
    return sentences


def write_sentences(path: str | os.PathLike, sentences: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")


def filter_by_length(corpus: Sequence[Sequence[str]], min_tokens: int = 7,
                     max_tokens: float = 100) -> list:
    if min_tokens < 1:
        raise ValueError("min_tokens must be >= 1")
    return [s for s in corpus if min_tokens <= len(s) <= max_tokens]


@dataclasses.dataclass
class Vocabulary:
    id_to_token: list[str]
    frequencies: list[int]
    token_to_id: dict[str, int] = dataclasses.field(init=False)

    pad_id = PAD_ID
    eos_id = EOS_ID
    unk_id = UNK_ID

    def __post_init__(self):
        if tuple(self.id_to_token[:3]) != RESERVED_TOKENS:
            raise ValueError("the first three tokens must be the reserved pad/eos/unk tokens")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    def detokenize(self, ids: Sequence[int]) -> list[str]:
        """Tokens up to the first EOS with pads dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i != PAD_ID:
                out.append(self.id_to_token[i])
        return out


def build_vocab(corpus: Sequence[Sequence[str]], max_size: int = 20000, min_freq: int = 1) -> Vocabulary:
    """Most frequent tokens first; ties keep first-occurrence order."""
    if not corpus or not any(corpus):
        raise IngestionError("cannot build a vocabulary from an empty corpus")
    if max_size < len(RESERVED_TOKENS):
        raise ValueError("max_size must leave room for the reserved tokens")
    counts: Counter[str] = Counter()
    for sentence in corpus:
        counts.update(sentence)
    # Counter preserves insertion order and sorted() is stable.
    ranked = sorted(((t, c) for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS),
                    key=lambda tc: -tc[1])
    ranked = ranked[:max_size - len(RESERVED_TOKENS)]
    tokens = list(RESERVED_TOKENS) + [t for t, _ in ranked]
    unk_count = sum(counts.values()) - sum(c for _, c in ranked)
    freqs = [0, len(corpus), unk_count] + [c for _, c in ranked]
    return Vocabulary(tokens, freqs)


@dataclasses.dataclass
class TokenSequence:
    """``ids`` has ``max_len`` entries; EOS sits at ``length`` when it fits."""

    ids: np.ndarray
    length: int

    def validate(self) -> None:
        validate_sequence(self.ids, self.length)


def validate_sequence(ids: Sequence[int], length: int) -> None:
    ids = np.asarray(ids)
    max_len = ids.shape[0]
    if not 0 <= length <= max_len:
        raise ValueError(f"length {length} outside [0, {max_len}]")
    body = ids[:length]
    if (body == PAD_ID).any() or (body == EOS_ID).any():
        raise ValueError("pad or eos inside the sentence body")
    if length < max_len:
        if ids[length] != EOS_ID:
            raise ValueError("missing eos after the sentence body")
        if (ids[length + 1:] != PAD_ID).any():
            raise ValueError("non-pad token after eos")


def encode_sentence(vocab: Vocabulary, tokens: Sequence[str], max_len: int) -> TokenSequence:
    """Encodes and pads; sentences of ``max_len`` or more tokens are truncated
    without an EOS."""
    body = vocab.encode(tokens)[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[:len(body)] = body
    if len(body) < max_len:
        ids[len(body)] = EOS_ID
    return TokenSequence(ids, len(body))


def encode_corpus(vocab: Vocabulary, corpus: Sequence[Sequence[str]], max_len: int) -> np.ndarray:
    out = np.full((len(corpus), max_len), PAD_ID, dtype=np.int64)
    for row, tokens in enumerate(corpus):
        out[row] = encode_sentence(vocab, tokens, max_len).ids
    return out


def step_mask(ids: np.ndarray, eos_id: int = EOS_ID) -> np.ndarray:
    """True for every step up to and including the first EOS."""
    ids = np.atleast_2d(ids)
    is_eos = ids == eos_id
    seen_before = np.cumsum(is_eos, axis=1) - is_eos
    return seen_before == 0


def sequence_lengths(ids: np.ndarray, eos_id: int = EOS_ID) -> np.ndarray:
    """Number of tokens before EOS (``max_len`` when EOS is absent)."""
    ids = np.atleast_2d(ids)
    is_eos = ids == eos_id
    has = is_eos.any(axis=1)
    return np.where(has, is_eos.argmax(axis=1), ids.shape[1])


def batch_iterator(encoded: np.ndarray, batch_size: int, rng: np.random.Generator,
                   epochs: int | None = None) -> Iterator[np.ndarray]:
    """Shuffled fixed-size batches; the ragged tail of each epoch is dropped."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = encoded.shape[0]
    per_epoch = n // batch_size
    if per_epoch == 0:
        raise ValueError(f"corpus of {n} sentences is smaller than one batch of {batch_size}")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(n)
        for b in range(per_epoch):
            yield encoded[order[b * batch_size:(b + 1) * batch_size]]
        epoch += 1


# -- embeddings ----------------------------------------------------------------

def load_embedding_file(path: str | os.PathLike | None, vocab: Vocabulary, dim: int,
                        seed: int = 0, init_std: float = 0.1) -> tuple[np.ndarray, float]:
    """Pretrained rows for ``vocab`` plus the fraction of rows found in the file.

    Rows not present in the file (reserved tokens included) are drawn from a
    seeded N(0, init_std). ``path=None`` behaves like an empty file.
    """
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, init_std, (len(vocab), dim))
    found = np.zeros(len(vocab), dtype=bool)
    if path is not None:
        with open(path, "rb") as fh:
            for number, raw in enumerate(fh, start=1):
                parts = tokenize(raw, line_number=number)
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    if number == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                        continue  # word2vec-style "count dim" header
                    raise IngestionError(
                        f"expected a token and {dim} values, found {len(parts) - 1} values", number)
                idx = vocab.token_to_id.get(parts[0])
                if idx is None:
                    continue
                try:
                    row = np.array([float(v) for v in parts[1:]])
                except ValueError:
                    raise IngestionError("non-numeric embedding value", number) from None
                table[idx] = row
                found[idx] = True
    return table, float(found.mean())


def write_embedding_file(path: str | os.PathLike, tokens: Sequence[str], table: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(tokens, table):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


class EmbeddingTable:
    """Frozen pretrained columns concatenated with learned columns."""

    def __init__(self, pretrained: np.ndarray, learned: ParamBlock):
        pretrained = np.asarray(pretrained, dtype=np.float64)
        if pretrained.ndim != 2 or pretrained.shape[0] != learned.value.shape[0]:
            raise ValueError("pretrained and learned tables need the same row count")
        pretrained.flags.writeable = False
        self.pretrained = pretrained
        self.learned = learned

    @classmethod
    def create(cls, pretrained: np.ndarray, learned_dim: int, rng: np.random.Generator,
               name: str, init_std: float = 0.1) -> "EmbeddingTable":
        vocab_size = pretrained.shape[0]
        return cls(pretrained, ParamBlock(name, rng.normal(0.0, init_std, (vocab_size, learned_dim))))

    @property
    def vocab_size(self) -> int:
        return self.pretrained.shape[0]

    @property
    def pretrained_dim(self) -> int:
        return self.pretrained.shape[1]

    @property
    def total_dim(self) -> int:
        return self.pretrained.shape[1] + self.learned.value.shape[1]

    def matrix(self) -> np.ndarray:
        return np.concatenate([self.pretrained, self.learned.value], axis=1)

    def accumulate(self, d_matrix: np.ndarray) -> None:
        """Routes a gradient w.r.t. the full matrix to the learned columns only."""
        self.learned.grad += d_matrix[:, self.pretrained_dim:]
