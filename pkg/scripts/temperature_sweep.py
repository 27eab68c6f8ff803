"""Quality/diversity trade-off of a Kneser-Ney model or a trained checkpoint
across sampling temperatures (BLEU-5 against validation, Self-BLEU-5, FED).

    python3 scripts/temperature_sweep.py --config desk
    python3 scripts/temperature_sweep.py --config desk --checkpoint runs/gan/step-3000.ckpt
"""

import argparse

from scratchgan.baselines import fit_kn, kn_sample_sentences
from scratchgan.checkpoint import Checkpoint, load_generator
from scratchgan.config import load_config
from scratchgan.experiment import prepare_data, sample_sentences
from scratchgan.metrics import fed, mean_sentence_bleu, self_bleu

parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
parser.add_argument("--config", default="desk")
parser.add_argument("--set", action="append", default=[])
parser.add_argument("--checkpoint")
parser.add_argument("--temps", default="0.6,0.8,1.0,1.2,1.4")
parser.add_argument("--count", type=int, default=1000)
args = parser.parse_args()

cfg = load_config(args.config, args.set)
data = prepare_data(cfg)
if args.checkpoint:
    ckpt = Checkpoint.load(args.checkpoint)
    gen, vocab = load_generator(ckpt), ckpt.vocab
    draw = lambda t: sample_sentences(gen, vocab, args.count, cfg.max_len, t, cfg.seed)
else:
    kn = fit_kn(data.train, cfg.kn_order, cfg.kn_discount)
    draw = lambda t: kn_sample_sentences(kn, args.count, cfg.max_len, cfg.seed, t)

refs = data.valid
print("temperature\tbleu_5\tself_bleu_5\tfed\tmean_len")
for temp in map(float, args.temps.split(",")):
    s = draw(temp)
    n = min(len(s), len(refs))
    print(f"{temp:g}\t{mean_sentence_bleu(s, refs, 5):.4f}\t{self_bleu(s, 5):.4f}\t"
          f"{fed(data.embedder(s[:n]), data.embedder(refs[:n])):.4f}\t{sum(map(len, s)) / len(s):.2f}")
