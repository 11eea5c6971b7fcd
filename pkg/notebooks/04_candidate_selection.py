"""
Sampling and selecting next-action candidates
=============================================

For one observed clip, draw Q goals and K candidates per goal, score every
candidate by how well its action-based goal matches the goal read from the
features, and keep the lowest score.
"""

import numpy as np

from abstract_goal.anticipator import STRATEGIES, generate_candidates, predict
from abstract_goal.model import ModelConfig, collapse_sigma, init_params

cfg = ModelConfig(d_f=6, d_c=5, d_h=16, d_z=8, mlp_hidden=16, T=4)
params = init_params(cfg, seed=3)
clip = np.random.default_rng(1).normal(size=(cfg.T, cfg.d_f))

cs = generate_candidates(params, clip, Q=3, K=4, rng=np.random.default_rng(0))
for i, c in enumerate(cs.candidates):
    mark = "  <- selected" if i == cs.best_index else ""
    print("goal %d  score %.5f%s" % (c.source_goal_index, c.d, mark))

# A plain scan agrees with the stored choice.
print("scan picks", int(np.argmin(cs.scores)), "stored", cs.best_index)

for s in STRATEGIES:
    pred = predict(params, clip, s, 3, 4, np.random.default_rng(0))
    print("%-15s top-3 classes %s" % (s, pred.topk[:3]))

# With every width head at the floor all candidates coincide.
flat = collapse_sigma(params)
print("collapsed:", {s: int(predict(flat, clip, s, 3, 4, np.random.default_rng(0)).topk[0]) for s in STRATEGIES})
