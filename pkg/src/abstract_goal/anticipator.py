"""Candidate generation, goal-consistency selection and prediction strategies.

Batched layouts (``B`` samples per batch):

* goal branches: column ``q * B + b``
* candidates:    column ``(k * Q + q) * B + b``

Per sample, candidates are enumerated goal-major, ``c = q * K + k``; that is
the order used for tie-breaking and for :class:`CandidateSet`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ShapeError
from .gaussians import DiagGaussian, reparam_sample, standard_normal, sym_kl_columns
from .model import GoalNet, ModelParams, stack_features

STRATEGIES = ("gc_argmin", "mean_vector", "median_vector", "majority_class", "median_class")
VRNN_AGGREGATIONS = ("mean", "median")


@dataclass
class Branches:
    z: nx.Node
    h: nx.Node
    a_O: nx.Node
    next_dist: DiagGaussian
    Q: int
    B: int


def goal_branches(net: GoalNet, trace, Q, rng) -> Branches:
    """Draw ``Q`` goals from the feature-based goal and build ``a_O`` for each.

    Branch 0 reuses the goal sampled during encoding; branches 1..Q-1 are
    fresh draws.  Each branch recomputes the last recurrent step with its own
    goal, so ``h_T`` and ``a_O`` both depend on the sampled goal.
    """
    goal = net.feature_goal(trace)
    B = goal.batch
    eps = trace.eps[-1]
    if Q > 1:
        eps = np.hstack([eps, standard_normal(rng, goal.dim, (Q - 1) * B)])
    z = reparam_sample(goal.tile(Q), rng, eps)
    h_prev = nx.tile_cols(trace.hs[-2], Q)
    fx = net.linear("phi_x", nx.tile_cols(trace.xs[-1], Q))
    h = net.recur(h_prev, fx, z)
    a_O = net.observed_action_rep(z, h)
    return Branches(z, h, a_O, net.next_action_dist(h, a_O), Q, B)


@dataclass
class CandidatePool:
    """All ``Q*K`` candidates for a batch, with goal-consistency scores."""

    branches: Branches
    a_N: nx.Node
    K: int
    feature_goal: DiagGaussian
    goal_prior: DiagGaussian | None
    scores: np.ndarray | None  # (Q*K, B), goal-major per sample
    best: np.ndarray  # (B,) candidate index per sample

    @property
    def Q(self):
        return self.branches.Q

    @property
    def B(self):
        return self.branches.B

    def column(self, c, b):
        q, k = np.divmod(c, self.K)
        return (k * self.Q + q) * self.B + b

    def best_columns(self):
        b = np.arange(self.B)
        return self.column(self.best, b)

    def selected(self):
        """Selected ``(a_N*, a_O*)`` nodes, ``B`` columns each."""
        b = np.arange(self.B)
        q = self.best // self.K
        a_n = nx.take_cols(self.a_N, self.best_columns())
        a_o = nx.take_cols(self.branches.a_O, q * self.B + b)
        return a_n, a_o


def generate_pool(net: GoalNet, trace, Q, K, rng, score=True) -> CandidatePool:
    if Q < 1 or K < 1:
        raise ConfigError(f"Q and K must be >= 1, got Q={Q}, K={K}")
    br = goal_branches(net, trace, Q, rng)
    nd = br.next_dist
    eps = standard_normal(rng, nd.dim, K * Q * br.B)
    a_N = reparam_sample(nd.tile(K), rng, eps)
    goal = net.feature_goal(trace)
    best = np.zeros(br.B, dtype=np.intp)
    scores = prior = None
    if score:
        prior = net.action_goal_prior(a_N)
        d = sym_kl_columns(goal.tile(Q * K), prior).value
        scores = d.reshape(K, Q, br.B).transpose(1, 0, 2).reshape(Q * K, br.B)
        best = np.argmin(scores, axis=0)
    return CandidatePool(br, a_N, K, goal, prior, scores, best)


@dataclass
class Candidate:
    a_N: np.ndarray
    goal_dist: DiagGaussian
    d: float
    source_goal_index: int


@dataclass
class CandidateSet:
    candidates: list
    best_index: int

    @property
    def scores(self):
        return np.array([c.d for c in self.candidates])


def _sequence_batch(x_seq):
    x = np.asarray(x_seq, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"x_seq must be a T x d_f matrix, got shape {x.shape}")
    return [x[t].reshape(-1, 1) for t in range(x.shape[0])]


def generate_candidates(params: ModelParams, x_seq, Q, K, rng) -> CandidateSet:
    """Candidate set for one observed sequence (``T x d_f``)."""
    tape = nx.Tape()
    net = GoalNet(params, tape, trainable=False)
    trace = net.encode(_sequence_batch(x_seq), rng)
    pool = generate_pool(net, trace, Q, K, rng, score=True)
    cands = []
    for c in range(Q * K):
        col = int(pool.column(c, 0))
        cands.append(Candidate(
            a_N=pool.a_N.value[:, col].copy(),
            goal_dist=pool.goal_prior.take([col]),
            d=float(pool.scores[c, 0]),
            source_goal_index=c // K,
        ))
    return CandidateSet(cands, int(pool.best[0]))


@dataclass
class Prediction:
    scores: np.ndarray
    topk: np.ndarray
    strategy: str


def rank_classes(scores):
    """Class indices by descending score, ties by ascending index."""
    return np.argsort(-np.asarray(scores), kind="stable")


def softmax(scores, axis=0):
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _votes(classes, d_c):
    """``classes`` is (n_candidates, B); returns (d_c, B) vote fractions."""
    n, B = classes.shape
    counts = np.zeros((d_c, B))
    for b in range(B):
        counts[:, b] = np.bincount(classes[:, b], minlength=d_c)
    return counts / n


def strategy_scores(net: GoalNet, pool: CandidatePool, strategy) -> np.ndarray:
    """Class-score matrix ``d_c x B`` for one strategy over a candidate pool."""
    Q, K, B = pool.Q, pool.K, pool.B
    d_z = pool.a_N.shape[0]
    if strategy == "gc_argmin":
        a_n, _ = pool.selected()
        return net.classify(a_n).value
    if strategy in ("mean_vector", "median_vector"):
        grid = pool.a_N.value.reshape(d_z, K * Q, B)
        agg = grid.mean(axis=1) if strategy == "mean_vector" else np.median(grid, axis=1)
        return net.classify(agg).value
    if strategy in ("majority_class", "median_class"):
        raw = net.classify(pool.a_N).value
        classes = raw.argmax(axis=0).reshape(K, Q, B).transpose(1, 0, 2).reshape(Q * K, B)
        votes = _votes(classes, net.cfg.d_c)
        if strategy == "median_class":
            med = np.sort(classes, axis=0)[(Q * K - 1) // 2]
            votes[med, np.arange(B)] += 1.0
        return votes
    raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def predict_batch(params: ModelParams, xs, strategy, Q, K, rng):
    """Score matrix ``d_c x B`` for a batch given as a length-T list of ``d_f x B``."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    net = GoalNet(params, nx.Tape(), trainable=False)
    trace = net.encode(xs, rng)
    pool = generate_pool(net, trace, Q, K, rng, score=strategy == "gc_argmin")
    scores = strategy_scores(net, pool, strategy)
    net.tape.release()
    return scores


def predict(params: ModelParams, x_seq, strategy, Q, K, rng) -> Prediction:
    scores = predict_batch(params, _sequence_batch(x_seq), strategy, Q, K, rng)[:, 0]
    return Prediction(scores, rank_classes(scores), strategy)


def vrnn_batch(params: ModelParams, xs, n_samples, aggregation, rng):
    if aggregation not in VRNN_AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}; expected mean or median")
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    net = GoalNet(params, nx.Tape(), trainable=False)
    trace = net.encode(xs, rng)
    br = goal_branches(net, trace, n_samples, rng)
    grid = br.a_O.value.reshape(br.a_O.shape[0], n_samples, br.B)
    agg = grid.mean(axis=1) if aggregation == "mean" else np.median(grid, axis=1)
    scores = net.classify_observed(agg).value
    net.tape.release()
    return scores


def vrnn_baseline_predict(params: ModelParams, x_seq, n_samples, aggregation, rng) -> Prediction:
    scores = vrnn_batch(params, _sequence_batch(x_seq), n_samples, aggregation, rng)[:, 0]
    return Prediction(scores, rank_classes(scores), f"vrnn_{aggregation}")


def late_fusion(score_vectors, weights) -> np.ndarray:
    """Convex combination of probability vectors; weights are renormalized."""
    vecs = [np.asarray(v, dtype=np.float64) for v in score_vectors]
    w = np.asarray(weights, dtype=np.float64)
    if len(vecs) == 0 or len(vecs) != w.shape[0]:
        raise ShapeError(f"{len(vecs)} score vectors but {w.shape[0]} weights")
    if any(v.shape != vecs[0].shape for v in vecs):
        raise ShapeError("score vectors differ in length: " + ", ".join(str(v.shape) for v in vecs))
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("fusion weights must be finite and non-negative")
    if w.sum() == 0:
        raise ConfigError("fusion weights are all zero")
    w = w / w.sum()
    out = np.zeros_like(vecs[0])
    for wi, v in zip(w, vecs):
        out += wi * v
    return out


def goal_pair_divergences(params: ModelParams, feats_a, feats_b, seeds):
    """Symmetric KL between feature-based goals of paired sequences.

    Both sides of pair ``i`` are encoded with noise from ``seeds[i]`` so an
    identical pair scores exactly zero.
    """
    if len(feats_a) != len(feats_b) or len(feats_a) != len(seeds):
        raise ShapeError("feats_a, feats_b and seeds must have equal length")
    goals = []
    for feats in (feats_a, feats_b):
        rngs = [np.random.default_rng(s) for s in seeds]
        net = GoalNet(params, nx.Tape(), trainable=False)
        trace = net.encode(stack_features(feats), rngs)
        goals.append(net.feature_goal(trace))
    return sym_kl_columns(goals[0], goals[1]).value[0]


def goal_pair_divergence(params: ModelParams, x_seq_a, x_seq_b, rng) -> float:
    seed = int(rng.integers(2**63)) if isinstance(rng, np.random.Generator) else int(rng)
    return float(goal_pair_divergences(params, [x_seq_a], [x_seq_b], [seed])[0])
