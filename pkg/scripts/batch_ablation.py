"""Batch-size axis: policy-gradient variance against batch size on the
bandit task, then final validation FED for small and large GAN batches.

    python3 scripts/batch_ablation.py --config desk --seeds 0,1,2,3,4 --set total_steps=300
"""

import argparse

from scratchgan.config import load_config
from scratchgan.experiment import prepare_data, run_gan, validation_fed
from scratchgan.toy import gradient_variance, loglog_slope, tiny_generator

parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
parser.add_argument("--config", default="desk")
parser.add_argument("--set", action="append", default=[])
parser.add_argument("--seeds", default="0,1,2,3,4")
parser.add_argument("--batches", default="8,256")
args = parser.parse_args()

sizes = [8, 32, 128, 256]
var = gradient_variance(tiny_generator(6, seed=0), sizes, repeats=200, target=4)
print("batch\tgradient_variance")
for n, v in zip(sizes, var):
    print(f"{n}\t{v:.6g}")
print(f"log-variance vs log-batch slope {loglog_slope(sizes, var):.3f}")

base = load_config(args.config, args.set)
data = prepare_data(base)
small, large = (int(b) for b in args.batches.split(","))
print(f"seed\tfed_batch{small}\tfed_batch{large}")
for seed in (int(s) for s in args.seeds.split(",")):
    final = {}
    for b in (small, large):
        cfg = base.replace(seed=seed, batch_size=b)
        final[b] = validation_fed(run_gan(cfg, data).state.gen, data, cfg.fed_samples, cfg.max_len)
    print(f"{seed}\t{final[small]:.4f}\t{final[large]:.4f}", flush=True)
