"""
Training and evaluating a small model
=====================================

Train a reduced model for a few epochs and compare the prediction
strategies on held-out videos.  Full-size defaults take a couple of
minutes; this version takes seconds.
"""

from abstract_goal.data import default_spec, generate, split
from abstract_goal.harness import TrainConfig, compare_strategies, train
from abstract_goal.model import ModelConfig

ds = split(generate(default_spec(), 1200, seed=0), (0.7, 0.1, 0.2), seed=0)
model_cfg = ModelConfig(d_f=16, d_c=8, d_h=32, d_z=16, mlp_hidden=32)
train_cfg = TrainConfig(epochs=10, batch_size=64)

params, history = train(ds.train, model_cfg, train_cfg)
for entry in history[::3] + history[-1:]:
    print({k: round(v, 4) for k, v in entry.items()})

# Chance is 1/8 for Top-1 and 5/8 for Top-5.
for row in compare_strategies(params, ds.test):
    print("%-15s top1 %.3f  top5 %.3f" % (row["strategy"], row["top1"], row["top5"]))
