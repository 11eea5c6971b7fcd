"""Self-contained oracle suites behind ``abstract-goal check``.

Each suite returns a list of ``CheckResult``; a suite passes when every
entry does.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .anticipator import generate_candidates
from .gaussians import DiagGaussian, kl, sym_kl
from .model import GoalNet, ModelConfig, init_params
from .objective import model_losses

TINY = ModelConfig(d_f=6, d_c=5, d_h=8, d_z=4, mlp_hidden=8, T=3, Q=2, K=3)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _smooth_tiny_params(seed):
    """Tiny model with random nonzero biases, so no ReLU sits on its kink."""
    params = init_params(TINY, seed)
    rng = np.random.default_rng(seed + 1000)
    for k in params.names():
        if ".b" in k:
            params.tensors[k] = rng.uniform(0.1, 0.5, params[k].shape) * rng.choice([-1, 1], params[k].shape)
    return params


def check_gradients(seed=0, tol=1e-4):
    params = _smooth_tiny_params(seed)
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=(TINY.d_f, 2)) for _ in range(TINY.T)]
    labels = np.array([1, 4])

    def f(tape, leaves):
        net = GoalNet.bind(TINY, leaves, tape)
        return model_losses(net, xs, labels, TINY.Q, TINY.K, np.random.default_rng(seed + 1)).total

    start = time.perf_counter()
    err = nx.finite_diff_check(f, params.tensors)
    took = time.perf_counter() - start
    return [CheckResult("total loss vs central differences", err < tol,
                        f"max relative error {err:.3g} (tol {tol:g}), {took:.1f}s")]


def _mc_kl(mu_p, sd_p, mu_q, sd_q, n, rng):
    x = mu_p + sd_p * rng.standard_normal((n, mu_p.size))
    log_p = -0.5 * ((x - mu_p) / sd_p) ** 2 - np.log(sd_p)
    log_q = -0.5 * ((x - mu_q) / sd_q) ** 2 - np.log(sd_q)
    return float(np.mean((log_p - log_q).sum(axis=1)))


def check_kl(seed=0, n_pairs=20, n_samples=200_000, rel_tol=0.01):
    rng = np.random.default_rng(seed)
    worst = 0.0
    self_max = 0.0
    symmetric = True
    tape = nx.Tape()
    for _ in range(n_pairs):
        mp, mq = rng.normal(size=8), rng.normal(size=8)
        sp, sq = rng.uniform(0.5, 1.5, 8), rng.uniform(0.5, 1.5, 8)
        p = DiagGaussian(tape.const(mp[:, None]), tape.const(sp[:, None]))
        q = DiagGaussian(tape.const(mq[:, None]), tape.const(sq[:, None]))
        closed = kl(p, q).item()
        est = _mc_kl(mp, sp, mq, sq, n_samples, rng)
        worst = max(worst, abs(closed - est) / closed)
        self_max = max(self_max, abs(kl(p, p).item()))
        symmetric &= sym_kl(p, q).item() == sym_kl(q, p).item()
    return [
        CheckResult("closed form vs Monte Carlo", worst < rel_tol, f"worst relative error {worst:.4f}"),
        CheckResult("kl(p, p) vanishes", self_max < 1e-12, f"max {self_max:.3g}"),
        CheckResult("symmetric divergence is bit-symmetric", symmetric, "all pairs" if symmetric else "mismatch"),
    ]


def check_selection(seed=0, n_models=100):
    rng = np.random.default_rng(seed)
    agree = 0
    for i in range(n_models):
        params = init_params(TINY, seed * 1000 + i)
        x = rng.normal(size=(TINY.T, TINY.d_f))
        cs = generate_candidates(params, x, 3, 4, np.random.default_rng([seed, i]))
        best = 0
        for j, c in enumerate(cs.candidates):
            if c.d < cs.candidates[best].d:
                best = j
        agree += best == cs.best_index
    return [CheckResult("argmin equals exhaustive scan", agree == n_models, f"{agree}/{n_models} agree")]


SUITES = {"gradients": check_gradients, "kl": check_kl, "selection": check_selection}
