"""Writes the synthetic topic-grammar corpus and embedding file used by desk.cfg.

    python3 scripts/make_desk_data.py data/desk
"""

import argparse

from scratchgan.synthetic import make_desk_corpus

parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
parser.add_argument("out_dir")
parser.add_argument("--n-train", type=int, default=10000)
parser.add_argument("--n-valid", type=int, default=2000)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
for name, path in make_desk_corpus(args.out_dir, args.n_train, args.n_valid, args.seed).items():
    print(f"{name}: {path}")
