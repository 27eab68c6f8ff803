"""FED of length-bucketed subsets of real validation sentences against the
full validation set. Real text scored against real text, so any trend is
the metric's length bias and not a model effect.

    python3 scripts/fed_vs_length.py --config desk
"""

import argparse

from scratchgan.config import load_config
from scratchgan.experiment import fed_by_length, prepare_data

parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
parser.add_argument("--config", default="desk")
parser.add_argument("--set", action="append", default=[])
parser.add_argument("--width", type=int, default=3)
args = parser.parse_args()

cfg = load_config(args.config, args.set)
data = prepare_data(cfg)
bins = [(lo, lo + args.width - 1) for lo in range(cfg.min_tokens, cfg.max_tokens + 1, args.width)]
print("min_len\tmax_len\tcount\tmean_len\tfed")
for row in fed_by_length(data.train, data.valid, data.embedder, bins):
    print(f"{row['min_len']}\t{row['max_len']}\t{row['count']}\t{row['mean_len']:.2f}\t{row['fed']:.4f}")
