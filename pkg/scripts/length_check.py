"""Generated versus validation sentence-length histograms for a checkpoint.

    python3 scripts/length_check.py --config desk --checkpoint runs/gan/step-3000.ckpt
"""

import argparse

import numpy as np

from scratchgan.checkpoint import Checkpoint, load_generator
from scratchgan.config import load_config
from scratchgan.experiment import length_histogram, prepare_data, sample_sentences

parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
parser.add_argument("--config", default="desk")
parser.add_argument("--set", action="append", default=[])
parser.add_argument("--checkpoint", required=True)
parser.add_argument("--count", type=int, default=2000)
args = parser.parse_args()

cfg = load_config(args.config, args.set)
data = prepare_data(cfg)
ckpt = Checkpoint.load(args.checkpoint)
samples = sample_sentences(load_generator(ckpt), ckpt.vocab, args.count, cfg.max_len, seed=cfg.seed)
gen_h, data_h = length_histogram(samples, cfg.max_len), length_histogram(data.valid, cfg.max_len)
print("length\tgenerated\tdata")
for n in np.flatnonzero((gen_h > 0) | (data_h > 0)):
    print(f"{n}\t{gen_h[n]:.4f}\t{data_h[n]:.4f}")
print(f"L1 {np.abs(gen_h - data_h).sum():.4f}  mean {np.mean([len(s) for s in samples]):.2f} "
      f"vs {np.mean([len(s) for s in data.valid]):.2f}")
