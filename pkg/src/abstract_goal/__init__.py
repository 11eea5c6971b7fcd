"""Abstract-goal next-action anticipation on a small numpy autodiff core."""

from .anticipator import (
    STRATEGIES, CandidateSet, Prediction, generate_candidates, goal_pair_divergence, late_fusion, predict,
    vrnn_baseline_predict,
)
from .data import SyntheticSpec, VideoSample, default_spec, generate, load_features, save_features, split
from .errors import AbstractGoalError
from .gaussians import DiagGaussian, kl, reparam_sample, sym_kl
from .harness import TrainConfig, evaluate, train
from .model import GoalNet, ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
