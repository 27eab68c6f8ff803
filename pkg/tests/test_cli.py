import json
import math

import numpy as np
import pytest

from scratchgan.baselines import KneserNeyModel
from scratchgan.checkpoint import Checkpoint
from scratchgan.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from scratchgan.corpus import read_corpus, write_sentences
from scratchgan.metrics import mean_sentence_bleu, self_bleu

TINY = ["gen_hidden=8", "disc_hidden=8", "gen_embed_dim=8", "disc_embed_dim=8", "batch_size=8", "fed_samples=50",
        "total_steps=100", "checkpoint_every=30", "mle_hidden=8", "mle_embed_dim=8", "mle_batch_size=8",
        "mle_steps=60", "mle_checkpoint_every=20", "eval_samples=60"]


def sets(paths, extra=()):
    base = [f"train_path={paths['train']}", f"valid_path={paths['valid']}",
            f"embedding_path={paths['embeddings']}", *TINY, *extra]
    return [x for s in base for x in ("--set", s)]


def run(cmd, paths, *args, extra=()):
    return main([cmd, "--config", "desk", *sets(paths, extra), *args])


@pytest.fixture(scope="module")
def gan_run(desk_paths, tmp_path_factory):
    out = tmp_path_factory.mktemp("gan")
    assert run("train-gan", desk_paths, "--out", str(out)) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def kn_run(desk_paths, tmp_path_factory):
    out = tmp_path_factory.mktemp("kn")
    assert run("train-ngram", desk_paths, "--out", str(out)) == EXIT_OK
    return out


def test_train_gan_writes_expected_checkpoints(gan_run):
    names = sorted(p.name for p in gan_run.glob("step-*.ckpt"))
    assert len(names) == math.ceil(100 / 30)
    assert names == sorted(f"step-{s}.ckpt" for s in (30, 60, 90, 100))
    records = [json.loads(line) for line in (gan_run / "checkpoints.jsonl").read_text().splitlines()]
    best = (gan_run / "best").read_text().strip()
    assert best == min(records, key=lambda r: r["fed"])["checkpoint"]
    assert len((gan_run / "metrics.jsonl").read_text().splitlines()) == 100
    assert Checkpoint.load(gan_run / best).kind == "scratchgan"


def test_train_gan_is_deterministic(desk_paths, gan_run, tmp_path):
    assert run("train-gan", desk_paths, "--out", str(tmp_path)) == EXIT_OK
    for name in ("metrics.jsonl", "checkpoints.jsonl", "config.cfg", "step-100.ckpt"):
        assert (tmp_path / name).read_bytes() == (gan_run / name).read_bytes()


def test_missing_corpus_fails_before_writing(desk_paths, tmp_path):
    out = tmp_path / "out"
    code = main(["train-gan", "--config", "desk", *sets(desk_paths, [f"train_path={tmp_path}/nope.txt"]),
                 "--out", str(out)])
    assert code == EXIT_IO and not out.exists()


def test_bad_config_and_usage_errors(desk_paths, tmp_path):
    assert run("train-gan", desk_paths, "--out", str(tmp_path), extra=["gamma=2"]) == EXIT_USAGE
    assert run("train-gan", desk_paths, "--out", str(tmp_path), extra=["bogus=1"]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert list(tmp_path.iterdir()) == []


def test_bad_checkpoint_is_an_io_error(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"\x00\x01garbage")
    assert main(["sample", "--checkpoint", str(bad), "--output", str(tmp_path / "s.txt")]) == EXIT_IO
    assert main(["sample", "--checkpoint", str(tmp_path / "missing"), "--output", str(tmp_path / "s.txt")]) == EXIT_IO


def test_sample_counts_seeds_and_temperature(gan_run, tmp_path):
    ckpt = str(gan_run / "step-100.ckpt")

    def sample(name, *args):
        path = tmp_path / name
        assert main(["sample", "--checkpoint", ckpt, "--output", str(path), *args]) == EXIT_OK
        return path

    assert sample("zero.txt", "--count", "0").read_text() == ""
    a = sample("a.txt", "--count", "50", "--seed", "3").read_bytes()
    assert a == sample("b.txt", "--count", "50", "--seed", "3").read_bytes()
    assert a != sample("c.txt", "--count", "50", "--seed", "4").read_bytes()
    assert len(a.decode().splitlines()) == 50
    assert main(["sample", "--checkpoint", ckpt, "--output", str(tmp_path / "x"), "--temperature", "0"]) == EXIT_USAGE
    assert main(["sample", "--checkpoint", ckpt, "--output", str(tmp_path / "x"), "--count", "-1"]) == EXIT_USAGE


def test_kn_temperature_orders_self_bleu(kn_run, tmp_path):
    ckpt = str(kn_run / "kn.counts")
    scores = {}
    for temp in ("0.5", "1.5"):
        path = tmp_path / f"t{temp}.txt"
        assert main(["sample", "--checkpoint", ckpt, "--output", str(path), "--count", "300",
                     "--temperature", temp, "--seed", "1"]) == EXIT_OK
        scores[temp] = self_bleu(read_corpus(path), 3)
    assert scores["0.5"] > scores["1.5"]


def test_train_ngram_outputs(kn_run, desk_paths):
    summary = json.loads((kn_run / "summary.json").read_text())
    assert summary["order"] == 5 and summary["train_sentences"] == len(read_corpus(desk_paths["train"]))
    assert 1 < summary["valid_perplexity"] < summary["vocab_size"]
    KneserNeyModel.load(kn_run / "kn.counts")


def test_train_ngram_small_corpus_is_fast(tmp_path):
    import time

    corpus = tmp_path / "ten.txt"
    write_sentences(corpus, [["w%d" % i, "and", "w%d" % (i + 1)] for i in range(10)])
    start = time.perf_counter()
    assert main(["train-ngram", "--set", f"train_path={corpus}", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert time.perf_counter() - start < 1.0


def test_train_mle_outputs(desk_paths, tmp_path):
    assert run("train-mle", desk_paths, "--out", str(tmp_path)) == EXIT_OK
    records = [json.loads(line) for line in (tmp_path / "checkpoints.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records][-1] == 60
    assert all(r["valid_perplexity"] > 1 for r in records)
    assert (tmp_path / (tmp_path / "best").read_text().strip()).exists()


def test_eval_of_training_data_matches_self_bleu(desk_paths, tmp_path):
    train = read_corpus(desk_paths["train"])[:200]
    path = tmp_path / "train200.txt"
    write_sentences(path, train)
    args = ["--samples", str(path), "--reference", str(path), "--metrics", "bleu_5,self_bleu_5,mean_length",
            "--out", str(tmp_path / "e")]
    assert run("eval", desk_paths, *args, extra=["eval_samples=1000"]) == EXIT_OK
    record = json.loads((tmp_path / "e" / "report.jsonl").read_text().splitlines()[0])
    values = record["values"]
    assert values["bleu_5"] == pytest.approx(values["self_bleu_5"], abs=1e-12)
    assert values["bleu_5"] == pytest.approx(self_bleu(train, 5), abs=1e-12)
    assert values["mean_length"] == pytest.approx(np.mean([len(s) for s in train]))
    assert (tmp_path / "e" / "report.csv").exists()
    assert (tmp_path / "e" / "longest_match.csv").read_text().startswith("model_id,temperature")


def test_eval_values_match_library(desk_paths, kn_run, tmp_path):
    samples = tmp_path / "s.txt"
    assert main(["sample", "--checkpoint", str(kn_run / "kn.counts"), "--output", str(samples),
                 "--count", "100"]) == EXIT_OK
    assert run("eval", desk_paths, "--samples", str(samples), "--metrics", "bleu_3,num_reference",
               "--out", str(tmp_path / "e")) == EXIT_OK
    values = json.loads((tmp_path / "e" / "report.jsonl").read_text())["values"]
    valid = read_corpus(desk_paths["valid"])
    assert values["bleu_3"] == pytest.approx(mean_sentence_bleu(read_corpus(samples), valid, 3), abs=1e-12)
    assert values["num_reference"] == len(valid)


def test_eval_sweeps_checkpoint_temperatures(desk_paths, gan_run, tmp_path):
    args = ["--checkpoint", str(gan_run / "step-100.ckpt"), "--temps", "0.7,1.0", "--count", "60",
            "--metrics", "self_bleu_3,perplexity,fed", "--out", str(tmp_path)]
    assert run("eval", desk_paths, *args) == EXIT_OK
    rows = [json.loads(line) for line in (tmp_path / "report.jsonl").read_text().splitlines()]
    assert [r["temperature"] for r in rows] == [0.7, 1.0]
    assert rows[0]["values"]["perplexity"] == rows[1]["values"]["perplexity"] > 1
    assert rows[0]["provenance"]["seed"] == "0"


def test_eval_errors(desk_paths, tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert run("eval", desk_paths, "--samples", str(empty), "--out", str(tmp_path / "a")) == EXIT_USAGE
    assert run("eval", desk_paths, "--out", str(tmp_path / "b")) == EXIT_USAGE
    assert run("eval", desk_paths, "--samples", str(empty), "--metrics", "nope", "--out", str(tmp_path / "c")) \
        == EXIT_USAGE


def test_nn_report(desk_paths, tmp_path):
    train = read_corpus(desk_paths["train"])
    samples = tmp_path / "s.txt"
    write_sentences(samples, [train[5], train[17], ["entirely", "novel", "words"]])
    assert run("nn-report", desk_paths, "--samples", str(samples), "--k", "2", "--out", str(tmp_path)) == EXIT_OK
    lines = (tmp_path / "neighbours.tsv").read_text().splitlines()
    assert len(lines) - 1 == 3 * 2 * 2
    assert run("nn-report", desk_paths, "--samples", str(samples), "--k", "1", "--out", str(tmp_path)) == EXIT_OK
    rows = [line.split("\t") for line in (tmp_path / "neighbours.tsv").read_text().splitlines()[1:]]
    top = {(int(r[0]), r[1]): r[6] for r in rows}
    assert top[(0, "3gram_cosine")] == " ".join(train[5])
    assert top[(1, "3gram_cosine")] == " ".join(train[17])
    assert run("nn-report", desk_paths, "--samples", str(samples), "--k", "0", "--out", str(tmp_path)) == EXIT_USAGE


def test_eval_with_lstm_language_model(desk_paths, kn_run, tmp_path):
    samples = tmp_path / "s.txt"
    assert main(["sample", "--checkpoint", str(kn_run / "kn.counts"), "--output", str(samples),
                 "--count", "60"]) == EXIT_OK
    assert run("eval", desk_paths, "--samples", str(samples), "--metrics", "lm_score,rlm_score",
               "--out", str(tmp_path / "e"), extra=["lm_kind=lstm", "mle_steps=20"]) == EXIT_OK
    values = json.loads((tmp_path / "e" / "report.jsonl").read_text())["values"]
    assert 0 < values["lm_score"] and 0 < values["rlm_score"]
