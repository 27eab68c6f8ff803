"""``scratchgan`` command line: training, sampling, evaluation and reports.

Exit codes: 0 success, 1 usage or configuration error, 2 input/output error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Callable, Sequence

import numpy as np

from .baselines import KneserNeyModel, MleLmConfig, fit_kn, fit_lstm_lm, kn_sample_sentences, train_mle
from .checkpoint import MAGIC, Checkpoint, CheckpointError, gan_checkpoint, generator_checkpoint, load_generator
from .config import ConfigError, RunConfig, load_config
from .corpus import IngestionError, encode_corpus, read_corpus, write_sentences
from .experiment import Dataset, build_gan, prepare_data, sample_sentences, validation_fed
from .generator import perplexity
from .metrics import (
    NeighbourIndex,
    fed,
    lm_rlm_scores,
    longest_match_histogram,
    mean_sentence_bleu,
    self_bleu,
    temperature_sweep,
    write_report_csv,
    write_reports,
)
from .trainer import DivergenceError, train_loop

log = logging.getLogger("scratchgan")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- shared helpers ------------------------------------------------------------

def _jsonl(path: str) -> Callable[[dict], None]:
    fh = open(path, "w", encoding="utf-8")

    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()

    write.close = fh.close
    return write


def _prepare_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _provenance(cfg: RunConfig, embedder_id: str) -> dict[str, str]:
    return {"config_hash": cfg.digest(), "seed": str(cfg.seed), "embedder_id": embedder_id}


def _write_best(out: str, name: str) -> None:
    with open(os.path.join(out, "best"), "w", encoding="utf-8") as fh:
        fh.write(name + "\n")


def _require_data(cfg: RunConfig) -> None:
    for key in ("train_path", "valid_path"):
        path = getattr(cfg, key)
        if not path:
            raise ConfigError(f"{key} is not set")
        if not os.path.isfile(path):
            raise FileNotFoundError(f"{key}: no such file {path}")


# -- training commands ------------------------------------------------------------

def cmd_train_gan(args, cfg: RunConfig) -> int:
    _require_data(cfg)
    data = prepare_data(cfg)
    out = _prepare_out(args.out)
    with open(os.path.join(out, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    state = build_gan(cfg, data)
    metrics_log = _jsonl(os.path.join(out, "metrics.jsonl"))
    fed_log = _jsonl(os.path.join(out, "checkpoints.jsonl"))
    extra = {"config_hash": cfg.digest(), "max_len": cfg.max_len, "seed": cfg.seed,
             "embedder_id": data.embedder.embedder_id}

    def on_checkpoint(st, score: float) -> None:
        name = f"step-{st.step}.ckpt"
        gan_checkpoint(st.gen, st.disc, data.vocab, st.step, extra).save(os.path.join(out, name))
        fed_log({"step": st.step, "fed": score, "checkpoint": name})

    try:
        best_step, best_fed, _ = train_loop(
            state, data.train_ids, cfg.train_config(),
            evaluate=lambda st: validation_fed(st.gen, data, cfg.fed_samples, cfg.max_len),
            on_checkpoint=on_checkpoint, on_metrics=metrics_log)
    finally:
        metrics_log.close()
        fed_log.close()
    _write_best(out, f"step-{best_step}.ckpt")
    print(f"best checkpoint step-{best_step}.ckpt validation FED {best_fed:.6f}")
    return EXIT_OK


def mle_config(cfg: RunConfig) -> MleLmConfig:
    return MleLmConfig(lstm_size=cfg.mle_hidden, embedding_size=cfg.mle_embed_dim,
                       embedding_dropout=cfg.mle_dropout, lr=cfg.mle_lr, num_layers=cfg.mle_layers,
                       batch_size=cfg.mle_batch_size, total_steps=cfg.mle_steps,
                       checkpoint_every=cfg.mle_checkpoint_every, seed=cfg.seed)


def cmd_train_mle(args, cfg: RunConfig) -> int:
    _require_data(cfg)
    data = prepare_data(cfg)
    out = _prepare_out(args.out)
    with open(os.path.join(out, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    metrics_log = _jsonl(os.path.join(out, "metrics.jsonl"))
    ppl_log = _jsonl(os.path.join(out, "checkpoints.jsonl"))
    extra = {"config_hash": cfg.digest(), "max_len": cfg.max_len, "seed": cfg.seed}

    def on_checkpoint(step: int, params, ppl: float) -> None:
        name = f"step-{step}.ckpt"
        generator_checkpoint(params, data.vocab, step, "mle", "mle", extra).save(os.path.join(out, name))
        ppl_log({"step": step, "valid_perplexity": ppl, "checkpoint": name})

    try:
        result = train_mle(data.train_ids, data.valid_ids, len(data.vocab), mle_config(cfg),
                           on_checkpoint=on_checkpoint, on_metrics=metrics_log)
    finally:
        metrics_log.close()
        ppl_log.close()
    if result.best_step == 0:
        generator_checkpoint(result.params, data.vocab, 0, "mle", "mle", extra).save(
            os.path.join(out, "step-0.ckpt"))
    _write_best(out, f"step-{result.best_step}.ckpt")
    print(f"best checkpoint step-{result.best_step}.ckpt validation perplexity {result.best_perplexity:.4f}")
    return EXIT_OK


def cmd_train_ngram(args, cfg: RunConfig) -> int:
    if not cfg.train_path:
        raise ConfigError("train_path is not set")
    train = [s for s in read_corpus(cfg.train_path, cfg.lowercase)
             if cfg.min_tokens <= len(s) <= cfg.max_tokens]
    if not train:
        raise ValueError("no training sentences left after length filtering")
    model = fit_kn(train, cfg.kn_order, cfg.kn_discount)
    out = _prepare_out(args.out)
    model.save(os.path.join(out, "kn.counts"))
    summary = {"order": cfg.kn_order, "discount": cfg.kn_discount, "vocab_size": len(model.vocab),
               "train_sentences": len(train), "config_hash": cfg.digest()}
    if cfg.valid_path:
        valid = [s for s in read_corpus(cfg.valid_path, cfg.lowercase)
                 if cfg.min_tokens <= len(s) <= cfg.max_tokens]
        if valid:
            summary["valid_perplexity"] = model.perplexity(valid)
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    print(f"wrote {os.path.join(out, 'kn.counts')}")
    return EXIT_OK


# -- sampling ----------------------------------------------------------------

class _Model:
    """A loaded checkpoint of either family behind one sampling interface."""

    def __init__(self, path: str, max_len: int | None = None):
        with open(path, "rb") as fh:
            head = fh.read(4)
        self.path = path
        self.model_id = os.path.basename(os.path.dirname(os.path.abspath(path))) + "/" + os.path.basename(path)
        if head == MAGIC:
            ckpt = Checkpoint.load(path)
            if ckpt.vocab is None:
                raise CheckpointError("checkpoint has no vocabulary")
            self.kind, self.step = ckpt.kind, ckpt.step
            self.gen = load_generator(ckpt)
            self.vocab = ckpt.vocab
            self.max_len = max_len or int(ckpt.metadata.get("max_len", 20))
            self.kn = None
        else:
            try:
                self.kn = KneserNeyModel.load(path)
            except (ValueError, StopIteration, UnicodeDecodeError) as exc:
                raise CheckpointError(f"{path}: not a loadable checkpoint ({exc})") from None
            self.kind, self.step, self.gen = "kneser-ney", 0, None
            self.vocab = self.kn.vocab
            self.max_len = max_len or 20

    def sample(self, n: int, temperature: float, seed: int) -> list[list[str]]:
        if n == 0:
            return []
        if self.kn is not None:
            return kn_sample_sentences(self.kn, n, self.max_len, seed, temperature)
        return sample_sentences(self.gen, self.vocab, n, self.max_len, temperature, seed)

    def perplexity(self, sentences) -> float:
        if self.kn is not None:
            return self.kn.perplexity(sentences)
        return perplexity(encode_corpus(self.vocab, sentences, self.max_len), self.gen)


def cmd_sample(args, cfg: RunConfig) -> int:
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    model = _Model(args.checkpoint, args.max_len)
    samples = model.sample(args.count, args.temperature, args.seed)
    write_sentences(args.output, samples)
    print(f"wrote {len(samples)} samples to {args.output}")
    return EXIT_OK


# -- evaluation ----------------------------------------------------------------

def _metric_fns(cfg: RunConfig, data: Dataset, references: list[list[str]], train: list[list[str]],
                model: _Model | None, metrics: Sequence[str]) -> dict[str, Callable]:
    """Metric closures over a fixed reference set. BLEU of a sample set that
    is the reference set itself leaves each sentence out of its own references."""
    fns: dict[str, Callable] = {}
    cache: dict[str, object] = {}

    if cfg.lm_kind == "lstm":
        fit_lm = lambda s: fit_lstm_lm(s, data.vocab, cfg.max_len, mle_config(cfg))
    else:
        fit_lm = lambda s: fit_kn(s, cfg.lm_order, cfg.kn_discount)

    def lm_pair(samples):
        # both scores come from one fit; keep the sample list alive so the identity check is sound
        if cache.get("samples") is not samples:
            if "real_lm" not in cache:
                cache["real_lm"] = fit_lm(train)
            cache["pair"] = lm_rlm_scores(samples, references, fit_lm, cache["real_lm"])
            cache["samples"] = samples
        return cache["pair"]

    def bleu(k):
        return lambda s: mean_sentence_bleu(s, references, k, leave_one_out=_same(s, references))

    def self_b(k):
        return lambda s: self_bleu(s, k, max_samples=cfg.eval_samples, seed=cfg.seed)

    def fed_fn(s):
        n = min(len(s), len(references))
        return fed(data.embedder(s[:n]), data.embedder(references[:n]))

    available = {
        "fed": fed_fn,
        "lm_score": lambda s: lm_pair(s)[0],
        "rlm_score": lambda s: lm_pair(s)[1],
        "mean_length": lambda s: float(np.mean([len(x) for x in s])),
        "reference_mean_length": lambda s: float(np.mean([len(x) for x in references])),
        "num_samples": lambda s: float(len(s)),
        "num_reference": lambda s: float(len(references)),
    }
    for k in range(1, 6):
        available[f"bleu_{k}"] = bleu(k)
        available[f"self_bleu_{k}"] = self_b(k)
    if model is not None:
        available["perplexity"] = lambda s: model.perplexity(references)
    for name in metrics:
        if name not in available:
            if name == "perplexity":
                log.warning("perplexity needs a checkpoint; skipped for a sample file")
                continue
            raise UsageError(f"unknown metric {name!r}")
        fns[name] = available[name]
    return fns


def _same(a, b) -> bool:
    return len(a) == len(b) and all(list(x) == list(y) for x, y in zip(a, b))


DEFAULT_METRICS = ["bleu_3", "bleu_5", "self_bleu_3", "self_bleu_5", "fed", "lm_score", "rlm_score",
                   "perplexity", "mean_length", "reference_mean_length", "num_samples", "num_reference"]


def cmd_eval(args, cfg: RunConfig) -> int:
    if bool(args.samples) == bool(args.checkpoint):
        raise UsageError("give exactly one of --samples or --checkpoint")
    _require_data(cfg)
    data = prepare_data(cfg)
    references = read_corpus(args.reference, cfg.lowercase) if args.reference else data.valid
    if not references:
        raise UsageError("reference set is empty")
    metrics = args.metrics.split(",") if args.metrics else DEFAULT_METRICS
    model = None
    if args.samples:
        samples = read_corpus(args.samples, cfg.lowercase)
        if not samples:
            raise UsageError(f"sample file {args.samples} is empty")
        temps = [1.0]
        model_id, step = os.path.basename(args.samples), 0

        def sample_fn(temp, seed):
            return samples
    else:
        model = _Model(args.checkpoint)
        temps = [float(t) for t in args.temps.split(",")]
        model_id, step = model.model_id, model.step
        count = args.count or cfg.eval_samples

        def sample_fn(temp, seed):
            return model.sample(count, temp, seed)

    fns = _metric_fns(cfg, data, references, data.train, model, metrics)
    prov = _provenance(cfg, data.embedder.embedder_id)
    reports = temperature_sweep(sample_fn, temps, fns, model_id, step, cfg.seed, prov, skip_errors=True)
    out = _prepare_out(args.out)
    write_reports(os.path.join(out, "report.jsonl"), reports)
    write_report_csv(os.path.join(out, "report.csv"), reports)

    rows = []
    for temp in temps:
        hist = longest_match_histogram(sample_fn(temp, cfg.seed), data.train)
        rows.extend((model_id, temp, length, count) for length, count in hist.items())
    with open(os.path.join(out, "longest_match.csv"), "w", encoding="utf-8") as fh:
        fh.write("model_id,temperature,longest_match,count\n")
        fh.writelines(f"{m},{t},{n},{c}\n" for m, t, n, c in rows)

    for r in reports:
        print(f"temperature {r.temperature:g}")
        for k in sorted(r.values):
            print(f"  {k:<22} {r.values[k]:.6f}")
        if "errors" in r.provenance:
            print(f"  errors: {r.provenance['errors']}")
    print("longest training-set match (tokens) : count")
    for _, temp, length, count in rows:
        print(f"  T={temp:g}  {length:>3} : {count}")
    return EXIT_OK


def cmd_nn_report(args, cfg: RunConfig) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    _require_data(cfg)
    data = prepare_data(cfg)
    samples = read_corpus(args.samples, cfg.lowercase)
    index = NeighbourIndex(data.train, data.embedder)
    out = _prepare_out(args.out)
    path = os.path.join(out, "neighbours.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_index\tmeasure\trank\ttrain_index\tscore\tsample\tneighbour\n")
        for i, s in enumerate(samples):
            for measure, ranked in (("3gram_cosine", index.by_ngram(s, args.k)),
                                    ("embedding_cosine", index.by_embedding(s, args.k))):
                for rank, (j, score) in enumerate(ranked, start=1):
                    fh.write(f"{i}\t{measure}\t{rank}\t{j}\t{score:.6f}\t{' '.join(s)}\t{' '.join(data.train[j])}\n")
    print(f"wrote {path}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scratchgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="config file path or shipped config name (desk, emnlp2017, wikitext103)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        return p

    p = common(sub.add_parser("train-gan", help="adversarial training from scratch"))
    p.set_defaults(func=cmd_train_gan)
    p = common(sub.add_parser("train-mle", help="maximum-likelihood LSTM language model"))
    p.set_defaults(func=cmd_train_mle)
    p = common(sub.add_parser("train-ngram", help="Kneser-Ney n-gram model"))
    p.set_defaults(func=cmd_train_ngram)

    p = common(sub.add_parser("sample", help="write samples from a checkpoint"), out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--output", required=True, help="sample file, one sentence per line")
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("eval", help="metric reports for a sample file or checkpoint"))
    p.add_argument("--samples")
    p.add_argument("--checkpoint")
    p.add_argument("--reference", help="reference corpus (default: the config's validation set)")
    p.add_argument("--metrics", help="comma-separated metric names")
    p.add_argument("--temps", default="1.0", help="comma-separated temperatures (checkpoints only)")
    p.add_argument("--count", type=int, default=0, help="samples per temperature (default eval_samples)")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("nn-report", help="nearest training neighbours of samples"))
    p.add_argument("--samples", required=True)
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_nn_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "temperature", 1.0) <= 0:
            raise UsageError("--temperature must be positive")
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"scratchgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"scratchgan: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, IngestionError, CheckpointError) as exc:
        print(f"scratchgan: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"scratchgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
