"""Binary checkpoint codec.

Layout, all integers little-endian::

    magic        4 bytes  b"SGCK"
    version      u32
    kind         u16 length + utf-8
    step         u64
    metadata     u32 length + utf-8 JSON (sorted keys)
    vocab        u32 count, then per token u32 length + utf-8, then count x i64 frequencies
    tensors      u32 count, then per tensor:
                 u16 name length + utf-8, u8 dtype code, u8 ndim, ndim x u64 dims, raw data

Decoding then re-encoding reproduces the input bytes exactly.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
import struct
import tempfile

import numpy as np

from .corpus import EmbeddingTable, Vocabulary
from .discriminator import DiscriminatorParams, init_discriminator
from .generator import GeneratorParams, init_generator

MAGIC = b"SGCK"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1}


class CheckpointError(ValueError):
    pass


@dataclasses.dataclass
class Checkpoint:
    kind: str
    step: int
    tensors: dict[str, np.ndarray]
    vocab: Vocabulary | None = None
    metadata: dict = dataclasses.field(default_factory=dict)

    def encode(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        _write_str(out, self.kind, "<H")
        out.write(struct.pack("<Q", self.step))
        _write_str(out, json.dumps(self.metadata, sort_keys=True), "<I")
        tokens = self.vocab.id_to_token if self.vocab is not None else []
        out.write(struct.pack("<I", len(tokens)))
        for tok in tokens:
            _write_str(out, tok, "<I")
        if tokens:
            out.write(np.asarray(self.vocab.frequencies, dtype="<i8").tobytes())
        out.write(struct.pack("<I", len(self.tensors)))
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            dtype = np.dtype("<f8") if arr.dtype.kind == "f" else np.dtype("<i8")
            _write_str(out, name, "<H")
            out.write(struct.pack("<BB", _CODES[dtype], arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        return out.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Checkpoint":
        buf = _Reader(data)
        if buf.take(4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = buf.unpack("<I")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        kind = buf.string("<H")
        (step,) = buf.unpack("<Q")
        metadata = json.loads(buf.string("<I"))
        (n_tokens,) = buf.unpack("<I")
        tokens = [buf.string("<I") for _ in range(n_tokens)]
        vocab = None
        if n_tokens:
            freqs = np.frombuffer(buf.take(8 * n_tokens), dtype="<i8")
            vocab = Vocabulary(tokens, [int(f) for f in freqs])
        (n_tensors,) = buf.unpack("<I")
        tensors = {}
        for _ in range(n_tensors):
            name = buf.string("<H")
            code, ndim = buf.unpack("<BB")
            if code not in _DTYPES:
                raise CheckpointError(f"{name}: unknown dtype code {code}")
            shape = buf.unpack(f"<{ndim}Q")
            dtype = _DTYPES[code]
            size = int(np.prod(shape)) * dtype.itemsize
            tensors[name] = np.frombuffer(buf.take(size), dtype=dtype).reshape(shape).copy()
        if buf.remaining:
            raise CheckpointError(f"{buf.remaining} trailing bytes after the tensor directory")
        return cls(kind, step, tensors, vocab, metadata)

    def save(self, path: str | os.PathLike) -> None:
        """Atomic write via a temporary file in the target directory."""
        path = os.fspath(path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(self.encode())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.decode(fh.read())


def _write_str(out: io.BytesIO, text: str, fmt: str) -> None:
    raw = text.encode("utf-8")
    out.write(struct.pack(fmt, len(raw)))
    out.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise CheckpointError("truncated checkpoint")
        chunk = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str) -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


# -- model <-> tensors ---------------------------------------------------------

def _model_tensors(params, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}/embedding/pretrained": params.embedding.pretrained}
    out.update((b.name, b.value) for b in params.blocks())
    return out


def _assign(params, tensors: dict[str, np.ndarray], prefix: str) -> None:
    wanted = {b.name: b for b in params.blocks()}
    key = f"{prefix}/embedding/pretrained"
    if key not in tensors or tensors[key].shape != params.embedding.pretrained.shape:
        raise CheckpointError(f"{key}: missing or wrong shape")
    for name, block in wanted.items():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tensors[name].shape != block.value.shape:
            raise CheckpointError(f"{name}: shape {tensors[name].shape} != expected {block.value.shape}")
        block.value[...] = tensors[name]
    params.embedding = EmbeddingTable(tensors[key], params.embedding.learned)


def generator_meta(params: GeneratorParams) -> dict:
    return {"vocab_size": params.vocab_size, "pretrained_dim": params.embedding.pretrained_dim,
            "learned_dim": params.embedding.learned.value.shape[1], "hidden": params.hidden,
            "num_layers": len(params.lstm_layers)}


def discriminator_meta(params: DiscriminatorParams) -> dict:
    return {"vocab_size": params.embedding.vocab_size, "pretrained_dim": params.embedding.pretrained_dim,
            "learned_dim": params.embedding.learned.value.shape[1], "hidden": params.hidden,
            "num_layers": len(params.lstm_layers),
            "max_len": params.positional.max_len if params.positional else 0,
            "positional": params.positional is not None, "dropout_rate": params.dropout_rate}


def restore_generator(tensors: dict[str, np.ndarray], meta: dict, prefix: str = "gen") -> GeneratorParams:
    try:
        shell = init_generator(np.zeros((meta["vocab_size"], meta["pretrained_dim"])), meta["learned_dim"],
                               meta["hidden"], meta["num_layers"], np.random.default_rng(0), prefix=prefix)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint metadata lacks {exc}") from None
    _assign(shell, tensors, prefix)
    return shell


def restore_discriminator(tensors: dict[str, np.ndarray], meta: dict, prefix: str = "disc") -> DiscriminatorParams:
    try:
        shell = init_discriminator(np.zeros((meta["vocab_size"], meta["pretrained_dim"])), meta["learned_dim"],
                                   meta["hidden"], meta["num_layers"], np.random.default_rng(0),
                                   max_len=max(1, meta["max_len"]), positional=meta["positional"],
                                   dropout_rate=meta["dropout_rate"], prefix=prefix)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint metadata lacks {exc}") from None
    _assign(shell, tensors, prefix)
    return shell


def generator_checkpoint(params: GeneratorParams, vocab: Vocabulary, step: int, kind: str = "mle",
                         prefix: str = "gen", extra: dict | None = None) -> Checkpoint:
    meta = {"generator": generator_meta(params), "generator_prefix": prefix, **(extra or {})}
    return Checkpoint(kind, step, _model_tensors(params, prefix), vocab, meta)


def gan_checkpoint(gen: GeneratorParams, disc: DiscriminatorParams, vocab: Vocabulary, step: int,
                   extra: dict | None = None) -> Checkpoint:
    tensors = _model_tensors(gen, "gen")
    tensors.update(_model_tensors(disc, "disc"))
    meta = {"generator": generator_meta(gen), "generator_prefix": "gen",
            "discriminator": discriminator_meta(disc), **(extra or {})}
    return Checkpoint("scratchgan", step, tensors, vocab, meta)


def load_generator(ckpt: Checkpoint) -> GeneratorParams:
    """The generator stored in any model checkpoint."""
    if "generator" not in ckpt.metadata:
        raise CheckpointError(f"checkpoint of kind {ckpt.kind!r} holds no generator")
    return restore_generator(ckpt.tensors, ckpt.metadata["generator"], ckpt.metadata.get("generator_prefix", "gen"))
