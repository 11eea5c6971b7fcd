"""Training, evaluation metrics, and the ablation / sweep protocols."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nx
from .anticipator import STRATEGIES, predict_batch, rank_classes, softmax, vrnn_batch, goal_pair_divergences
from .data import DatasetSplit, SyntheticSpec, generate, split as split_samples
from .errors import ConfigError, OptimizerError, SamplingError, TrainingError
from .model import GoalNet, ModelConfig, ModelParams, init_params, stack_features
from .objective import LOSS_NAMES, model_losses, normalize_flags

log = logging.getLogger(__name__)

EVAL_STRATEGIES = STRATEGIES + ("vrnn_mean", "vrnn_median")

# Row structure of the loss ablation table, in table order.
LOSS_ABLATION_ROWS = (
    ("na",),
    ("na", "og"),
    ("na", "ng"),
    ("na", "gc"),
    ("na", "og", "ng"),
    ("na", "og", "gc"),
    ("na", "og", "ng", "gc"),
)

DEFAULT_Q_GRID = (1, 2, 3, 4, 5)
DEFAULT_K_GRID = (1, 3, 5, 10, 20, 30)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    loss_flags: dict = field(default_factory=lambda: dict.fromkeys(LOSS_NAMES, True))
    Q: int = 3
    K: int = 10
    seed: int = 0
    mode: str = "goal"

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.Q < 1 or self.K < 1:
            raise ConfigError("Q and K must be >= 1")
        if self.mode not in ("goal", "vrnn"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        self.loss_flags = normalize_flags(self.loss_flags)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params):
        tensors = params.tensors if isinstance(params, ModelParams) else params
        return cls({k: np.zeros_like(a) for k, a in tensors.items()},
                   {k: np.zeros_like(a) for k, a in tensors.items()})


def adamw_step(params, grads, state: AdamState, config: TrainConfig):
    """One AdamW update in place, weight decay decoupled from the moments."""
    tensors = params.tensors if isinstance(params, ModelParams) else params
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {k!r}")
    b1, b2 = config.betas
    lr, wd, eps = config.learning_rate, config.weight_decay, config.eps
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, p in tensors.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p -= lr * update + lr * wd * p
    return params, state


# -- training ----------------------------------------------------------------

def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(samples, model_config: ModelConfig, config: TrainConfig, log_path=None):
    """Train from scratch; returns ``(params, epoch_log)``.

    Each log entry holds the sample-weighted mean of every enabled loss
    term; disabled terms are absent.
    """
    if not samples:
        raise ConfigError("training split is empty")
    params = init_params(model_config, config.seed)
    state = AdamState.zeros(params)
    history = []
    for epoch in range(1, config.epochs + 1):
        sums, seen = {}, 0
        batches = _batches(len(samples), config.batch_size, np.random.default_rng([config.seed, epoch]))
        for bi, idx in enumerate(batches):
            batch = [samples[i] for i in idx]
            xs = stack_features([s.features for s in batch])
            labels = np.array([s.label for s in batch])
            tape = nx.Tape([config.seed, epoch, bi])
            net = GoalNet(params, tape)
            parts = model_losses(net, xs, labels, config.Q, config.K, tape.rng,
                                 config.loss_flags, config.mode)
            root = parts.total
            values = parts.values()
            values["total"] = root.item()
            if not all(math.isfinite(v) for v in values.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}: {values}")
            nx.backward(root)
            grads = {k: node.grad for k, node in net.p.items()}
            adamw_step(params, grads, state, config)
            tape.release()
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v * len(batch)
            seen += len(batch)
        entry = {"epoch": epoch, **{k: sums[k] / seen for k in sums}}
        history.append(entry)
        log.info("epoch %d %s", epoch, entry)
    if log_path is not None:
        write_log(history, log_path)
    return params, history


def write_log(history, path):
    keys = ("epoch", "l_og", "l_ng", "l_gc", "l_na", "total")
    with open(path, "w", encoding="utf-8") as fh:
        for e in history:
            fh.write(json.dumps({k: e[k] for k in keys if k in e}) + "\n")


# -- evaluation --------------------------------------------------------------

@dataclass
class MetricReport:
    top1: float
    top5: float
    mean_class_recall_at_5: float
    per_class_recall: np.ndarray
    n_samples: int

    def row(self):
        return {"top1": self.top1, "top5": self.top5,
                "mean_class_recall_at_5": self.mean_class_recall_at_5, "n_samples": self.n_samples}


def video_rng(seed, video_id):
    return np.random.default_rng([int(seed), zlib.crc32(str(video_id).encode("utf-8"))])


def score_samples(params: ModelParams, samples, strategy="gc_argmin", Q=3, K=10, seed=0, batch_size=256):
    """Class probabilities, ``N x d_c``, one row per sample in input order.

    Sampling noise is keyed by ``(seed, video id)`` so a video's prediction
    does not depend on batch composition or on split order.
    """
    if strategy not in EVAL_STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {EVAL_STRATEGIES}")
    out = []
    for i in range(0, len(samples), batch_size):
        batch = samples[i:i + batch_size]
        xs = stack_features([s.features for s in batch])
        rngs = [video_rng(seed, s.id) for s in batch]
        if strategy.startswith("vrnn_"):
            scores = vrnn_batch(params, xs, Q * K, strategy[len("vrnn_"):], rngs)
        else:
            scores = predict_batch(params, xs, strategy, Q, K, rngs)
        out.append(softmax(scores, axis=0).T)
    d_c = params.config.d_c
    return np.vstack(out) if out else np.zeros((0, d_c))


def compute_metrics(probs, labels, d_c=None) -> MetricReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n, c = probs.shape
    d_c = c if d_c is None else d_c
    if n == 0:
        raise ConfigError("cannot evaluate an empty split")
    order = np.argsort(-probs, axis=1, kind="stable")
    rank = np.argmax(order == labels[:, None], axis=1)
    hit1 = rank < 1
    hit5 = rank < 5
    per_class = np.full(d_c, np.nan)
    for k in np.unique(labels):
        mask = labels == k
        per_class[k] = hit5[mask].sum() / mask.sum()
    present = ~np.isnan(per_class)
    return MetricReport(
        top1=float(hit1.sum() / n),
        top5=float(hit5.sum() / n),
        mean_class_recall_at_5=float(per_class[present].mean()),
        per_class_recall=per_class,
        n_samples=int(n),
    )


def evaluate(params: ModelParams, samples, strategy="gc_argmin", Q=3, K=10, seed=0) -> MetricReport:
    probs = score_samples(params, samples, strategy, Q, K, seed)
    return compute_metrics(probs, [s.label for s in samples], params.config.d_c)


# -- protocols ---------------------------------------------------------------

def _eval_part(dataset, which):
    if isinstance(dataset, DatasetSplit):
        return getattr(dataset, which)
    return dataset


def _train_part(dataset):
    return dataset.train if isinstance(dataset, DatasetSplit) else dataset


def ablate_losses(dataset, model_config, base_config: TrainConfig, eval_on="test", strategy="gc_argmin"):
    """Train and evaluate every loss-flag combination of the ablation table."""
    rows = []
    for combo in LOSS_ABLATION_ROWS:
        flags = {k: k in combo for k in LOSS_NAMES}
        cfg = replace(base_config, loss_flags=flags)
        params, history = train(_train_part(dataset), model_config, cfg)
        rep = evaluate(params, _eval_part(dataset, eval_on), strategy, cfg.Q, cfg.K, cfg.seed)
        name = "+".join(k.upper() for k in ("na", "og", "ng", "gc") if k in combo)
        rows.append({"losses": name, **{k: int(flags[k]) for k in LOSS_NAMES}, **rep.row()})
    return rows


def qk_grid(Q_list=None, K_list=None):
    if Q_list is None and K_list is None:
        return [("Q", q, 10) for q in DEFAULT_Q_GRID] + [("K", 3, k) for k in DEFAULT_K_GRID]
    Q_list = list(Q_list or [3])
    K_list = list(K_list or [10])
    if not Q_list or not K_list:
        raise ConfigError("Q and K lists must be nonempty")
    return [("grid", q, k) for q in Q_list for k in K_list]


def sweep_qk(dataset, model_config, config: TrainConfig, Q_list=None, K_list=None,
             params=None, retrain=False, eval_on="test", strategy="gc_argmin"):
    """Evaluate across (Q, K).  By default one trained model is re-run at
    inference time; ``retrain=True`` trains one model per cell instead."""
    rows = []
    if params is None and not retrain:
        params, _ = train(_train_part(dataset), model_config, config)
    for axis, q, k in qk_grid(Q_list, K_list):
        cell_params = params
        if retrain:
            cell_params, _ = train(_train_part(dataset), model_config, replace(config, Q=q, K=k))
        rep = evaluate(cell_params, _eval_part(dataset, eval_on), strategy, q, k, config.seed)
        rows.append({"axis": axis, "Q": q, "K": k, **rep.row()})
    return rows


def sweep_horizon(spec: SyntheticSpec, gaps, model_config, config: TrainConfig,
                  n_videos=3000, data_seed=0, fractions=(0.7, 0.1, 0.2), strategy="gc_argmin"):
    """One freshly trained model per anticipation gap; same underlying videos."""
    gaps = list(gaps)
    if not gaps:
        raise ConfigError("gap list is empty")
    rows = []
    for gap in gaps:
        samples = generate(spec.with_gap(int(gap)), n_videos, data_seed)
        ds = split_samples(samples, fractions, data_seed)
        params, _ = train(ds.train, model_config, config)
        rep = evaluate(params, ds.test, strategy, config.Q, config.K, config.seed)
        rows.append({"gap_steps": int(gap), **rep.row()})
    return rows


def goal_similarity_report(params: ModelParams, samples, n_pairs=500, seed=0):
    """Mean goal divergence over same-goal and different-goal video pairs."""
    by_goal = {}
    for i, s in enumerate(samples):
        if s.goal_id is None:
            raise SamplingError(f"sample {s.id} has no goal_id")
        by_goal.setdefault(int(s.goal_id), []).append(i)
    goals = sorted(by_goal)
    short = [g for g in goals if len(by_goal[g]) < 2]
    if short:
        raise SamplingError(f"goals {short} have fewer than 2 videos")
    if len(goals) < 2:
        raise SamplingError("need at least two goals for different-goal pairs")
    rng = np.random.default_rng(seed)
    same, diff = [], []
    for _ in range(n_pairs):
        g = goals[rng.integers(len(goals))]
        i, j = rng.choice(by_goal[g], size=2, replace=False)
        same.append((i, j))
        g1, g2 = rng.choice(goals, size=2, replace=False)
        diff.append((rng.choice(by_goal[int(g1)]), rng.choice(by_goal[int(g2)])))
    out = {}
    for key, pairs in (("same", same), ("diff", diff)):
        seeds = [[seed, n] for n in range(len(pairs))]
        d = goal_pair_divergences(
            params,
            [samples[i].features for i, _ in pairs],
            [samples[j].features for _, j in pairs],
            seeds,
        )
        out[f"mean_{key}"] = float(np.mean(d))
    out["n_pairs"] = int(n_pairs)
    return out


def seed_stability(samples, params: ModelParams, n_runs=10, strategy="gc_argmin", Q=3, K=10, seeds=None):
    """Evaluate with ``n_runs`` sampling seeds; mean and population std per metric."""
    seeds = list(range(n_runs)) if seeds is None else list(seeds)
    runs = [evaluate(params, samples, strategy, Q, K, s) for s in seeds]
    summary = {}
    for m in ("top1", "top5", "mean_class_recall_at_5"):
        vals = np.array([getattr(r, m) for r in runs])
        summary[m] = {"mean": float(vals.mean()), "std": float(vals.std()), "runs": vals.tolist()}
    return summary


def seed_stability_rows(summary):
    metrics = list(summary)
    n = len(summary[metrics[0]]["runs"])
    rows = [{"run": str(i), **{m: summary[m]["runs"][i] for m in metrics}} for i in range(n)]
    rows.append({"run": "mean", **{m: summary[m]["mean"] for m in metrics}})
    rows.append({"run": "std", **{m: summary[m]["std"] for m in metrics}})
    return rows


def compare_strategies(params: ModelParams, samples, Q=3, K=10, seed=0, vrnn_params=None):
    """Top-k per prediction strategy.  The VRNN rows need a model trained with
    ``mode="vrnn"`` and are included only when ``vrnn_params`` is given."""
    rows = [{"strategy": s, **evaluate(params, samples, s, Q, K, seed).row()} for s in STRATEGIES]
    if vrnn_params is not None:
        for s in EVAL_STRATEGIES[len(STRATEGIES):]:
            rows.append({"strategy": s, **evaluate(vrnn_params, samples, s, Q, K, seed).row()})
    return rows


# -- CSV ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def csv_text(rows):
    buf = io.StringIO()
    if rows:
        header = list(rows[0])
        for r in rows[1:]:
            header += [k for k in r if k not in header]
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) if k in r else "" for k in header])
    return buf.getvalue()


def write_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(rows))
