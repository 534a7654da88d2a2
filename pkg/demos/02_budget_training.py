"""Training to a compute budget
==============================

Train a small gated network on the shapes task, lower the target density in
steps, and watch the measured density and FLOP ratio follow it.  Ponder maps
(how many blocks ran at each pixel) are written as PGM images.

    python demos/02_budget_training.py     # about three minutes on one core
"""

# %%
import argparse
from pathlib import Path

from pagnet.data import gen_dataset
from pagnet.train import evaluate, predicted_ratio, toy_config, train

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo_budget")
args = parser.parse_args()

schedule = (0.9, 0.7, 0.5)
cfg = toy_config(rho=schedule[-1], rho_schedule=schedule, n_eval=40)
print(f"depth {cfg.depth}, {cfg.channels} channels, crops of {cfg.crop_size} px")

# %% [markdown]
# One call runs the staged recipe: a dense base, gates inserted one block at a
# time, then one fine-tuning stage per target density.  Snapshots keep the
# weights at the end of each target.

# %%
result = train(cfg, snapshot_rhos=schedule)
data = gen_dataset(cfg.task, cfg.image_size, cfg.n_eval, cfg.seed, "eval")
s = cfg.crop_size

# %%
print(f"{'target':>6} {'train':>6} {'eval':>6} {'flops':>6} {'model':>6} {'IoU':>6}")
for rho in schedule:
    params, net, train_density = result.snapshots[rho]
    out = Path(args.out) / f"rho{rho:g}"
    ev = evaluate(params, net, data, out_dir=out, rho=rho)
    m = ev.metrics
    print(f"{rho:6.2f} {train_density:6.3f} {m['density_mean']:6.3f} {m['flop_ratio']:6.3f} "
          f"{predicted_ratio(net, rho, s, s):6.3f} {m['iou']:6.3f}")

print(f"ponder maps and eval.csv under {args.out}/")
