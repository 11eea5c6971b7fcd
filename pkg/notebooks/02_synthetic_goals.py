"""
Goal-driven synthetic sequences
===============================

Each video follows one of several hidden goals.  The goal picks the Markov
chain that decides which action comes next, so the same observed action can
lead to different next actions depending on the goal.
"""

import numpy as np

from abstract_goal.data import default_spec, generate, sample_video, split

spec = default_spec()
print("goals %d, actions %d, feature dim %d, observed steps %d" % (spec.n_goals, spec.n_actions, spec.d_f, spec.T))

# Most likely successor of every action, per goal.
print("dominant successor per goal:")
print(spec.transition.argmax(axis=2))

# One video: the underlying action chain and its label.
sample, steps = sample_video(spec, 0, seed=0)
print("goal", sample.goal_id, "steps", steps, "label", sample.label)

# A longer gap relabels the same chain further ahead.
for gap in (1, 2, 3, 4):
    s, _ = sample_video(spec.with_gap(gap), 0, seed=0)
    print("gap %d -> label %d" % (gap, s.label))

# Best achievable Top-1 if the goal and current action were known exactly.
print("ceiling Top-1 ~ %.3f" % spec.transition.max(axis=2).mean())

samples = generate(spec, 1000, seed=0)
ds = split(samples, (0.7, 0.1, 0.2), seed=0)
print("split sizes:", len(ds.train), len(ds.val), len(ds.test))
print("label histogram:", np.bincount([s.label for s in samples], minlength=spec.n_actions))
