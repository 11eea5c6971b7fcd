"""Training losses.  Every loss is averaged over the batch columns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .anticipator import generate_pool, goal_branches
from .errors import ConfigError, ContractError
from .gaussians import DiagGaussian, kl_columns, sym_kl_columns
from .model import GoalNet

LOSS_NAMES = ("og", "ng", "gc", "na")


@dataclass
class LossBreakdown:
    """Loss nodes; a disabled term is ``None`` and never enters the graph."""

    l_og: nx.Node | None = None
    l_ng: nx.Node | None = None
    l_gc: nx.Node | None = None
    l_na: nx.Node | None = None

    def parts(self):
        return {k: getattr(self, f"l_{k}") for k in LOSS_NAMES if getattr(self, f"l_{k}") is not None}

    @property
    def total(self):
        return total_loss(self)

    def values(self):
        return {f"l_{k}": v.item() for k, v in self.parts().items()}


def loss_og(trace):
    per_col = kl_columns(trace.posteriors[0], trace.priors[0])
    for post, prior in zip(trace.posteriors[1:], trace.priors[1:]):
        per_col = nx.add(per_col, kl_columns(post, prior))
    return nx.mean(per_col)


def loss_ng(net: GoalNet, a_N_star, a_O):
    posterior = net.action_goal_posterior(a_N_star, a_O)
    prior = net.action_goal_prior(a_N_star)
    return nx.mean(kl_columns(posterior, prior))


def loss_gc(p_zT: DiagGaussian, p_zN_star: DiagGaussian):
    return nx.mean(sym_kl_columns(p_zT, p_zN_star))


def loss_na(scores, labels):
    labels = np.atleast_1d(np.asarray(labels))
    d_c = scores.shape[0]
    if np.any(labels < 0) or np.any(labels >= d_c):
        raise IndexError(f"label out of range for {d_c} classes: {labels}")
    return nx.scale(nx.mean(nx.pick(nx.log_softmax(scores), labels)), -1.0)


def total_loss(parts: LossBreakdown):
    nodes = list(parts.parts().values())
    if not nodes:
        raise ContractError("no loss terms enabled")
    out = nodes[0]
    for n in nodes[1:]:
        out = nx.add(out, n)
    return out


def normalize_flags(flags):
    if flags is None:
        return dict.fromkeys(LOSS_NAMES, True)
    flags = {k: bool(flags.get(k, False)) for k in LOSS_NAMES}
    if not flags["na"]:
        raise ConfigError("the cross-entropy term (na) cannot be disabled")
    return flags


def model_losses(net: GoalNet, xs, labels, Q, K, rng, flags=None, mode="goal") -> LossBreakdown:
    """Forward pass for a batch and the flagged loss terms.

    ``mode="vrnn"`` trains the plain VRNN baseline: only the encoder KL and a
    cross-entropy on the classified observed representation.
    """
    flags = normalize_flags(flags)
    trace = net.encode(xs, rng)
    out = LossBreakdown()
    if flags["og"]:
        out.l_og = loss_og(trace)
    if mode == "vrnn":
        br = goal_branches(net, trace, 1, rng)
        out.l_na = loss_na(net.classify_observed(br.a_O), labels)
        return out
    if mode != "goal":
        raise ConfigError(f"unknown training mode {mode!r}")
    pool = generate_pool(net, trace, Q, K, rng, score=Q * K > 1)
    a_n, a_o = pool.selected()
    if flags["ng"]:
        out.l_ng = loss_ng(net, a_n, a_o)
    if flags["gc"]:
        out.l_gc = loss_gc(net.feature_goal(trace), net.action_goal_prior(a_n))
    out.l_na = loss_na(net.classify(a_n), labels)
    return out
