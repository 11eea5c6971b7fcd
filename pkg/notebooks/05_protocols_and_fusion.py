"""
Ablation tables and late fusion
===============================

Run the loss ablation and the Q/K sweep on a reduced setup, write them as
CSV, then fuse per-video probabilities from two scorers.
"""

import numpy as np

from abstract_goal.anticipator import late_fusion
from abstract_goal.data import default_spec, generate, split
from abstract_goal.harness import (
    TrainConfig, ablate_losses, csv_text, score_samples, seed_stability, seed_stability_rows, sweep_qk, train,
)
from abstract_goal.model import ModelConfig

ds = split(generate(default_spec(), 600, seed=1), (0.7, 0.1, 0.2), seed=0)
cfg = ModelConfig(d_f=16, d_c=8, d_h=16, d_z=8, mlp_hidden=16)
quick = TrainConfig(epochs=3, batch_size=64)

print(csv_text(ablate_losses(ds, cfg, quick)))

params, _ = train(ds.train, cfg, quick)
print(csv_text(sweep_qk(ds, cfg, quick, params=params)))
print(csv_text(seed_stability_rows(seed_stability(ds.test, params, n_runs=5))))

# Two scorers over the same videos, fused with fixed weights.
a = score_samples(params, ds.test, "gc_argmin")
b = score_samples(params, ds.test, "mean_vector")
fused = np.array([late_fusion([pa, pb], [0.5, 0.5]) for pa, pb in zip(a, b)])
labels = np.array([s.label for s in ds.test])
for name, probs in (("gc_argmin", a), ("mean_vector", b), ("fused", fused)):
    print("%-12s top1 %.3f" % (name, np.mean(probs.argmax(axis=1) == labels)))
