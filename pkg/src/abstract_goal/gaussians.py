"""Diagonal Gaussians on the tape: sampling, KL divergence, symmetric KL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ShapeError

SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class DiagGaussian:
    """Mean and standard deviation nodes, each ``d_z x B``."""

    mean: nx.Node
    std: nx.Node

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"mean {self.mean.shape} and std {self.std.shape} differ")

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def batch(self):
        return self.mean.shape[1]

    def take(self, idx):
        return DiagGaussian(nx.take_cols(self.mean, idx), nx.take_cols(self.std, idx))

    def tile(self, reps):
        return DiagGaussian(nx.tile_cols(self.mean, reps), nx.tile_cols(self.std, reps))


def std_head(raw):
    """Map an unconstrained head output to a standard deviation >= SIGMA_FLOOR."""
    return nx.shift(nx.softplus(raw), SIGMA_FLOOR)


def standard_normal(rng, rows, cols):
    """Draw ``rows x cols`` standard normals.

    ``rng`` is either one generator or a sequence of per-sample generators.
    In the latter case column ``j`` belongs to sample ``j % len(rng)`` and is
    drawn from that sample's generator, so a sample's noise does not depend
    on which other samples share its batch.
    """
    if isinstance(rng, np.random.Generator):
        # Column-major fill, so a lone generator matches a batch of one.
        return np.ascontiguousarray(rng.standard_normal((cols, rows)).T)
    n = len(rng)
    if cols % n:
        raise ShapeError(f"{cols} columns cannot be split over {n} generators")
    reps = cols // n
    out = np.empty((rows, cols))
    for b, g in enumerate(rng):
        out[:, b::n] = g.standard_normal((reps, rows)).T
    return out


def reparam_sample(d: DiagGaussian, rng, eps=None):
    """``mean + std * eps`` with ``eps`` held constant on the tape."""
    if eps is None:
        eps = standard_normal(rng, *d.mean.shape)
    e = d.mean.tape.const(eps)
    return nx.add(d.mean, nx.mul(d.std, e))


def kl_columns(p: DiagGaussian, q: DiagGaussian):
    """Per-column KL(p || q), ``1 x B``."""
    if p.mean.shape != q.mean.shape:
        raise ShapeError(f"kl: dimension mismatch {p.mean.shape} vs {q.mean.shape}")
    log_ratio = nx.sub(nx.log(q.std), nx.log(p.std))
    num = nx.add(nx.square(p.std), nx.square(nx.sub(p.mean, q.mean)))
    quad = nx.div(num, nx.scale(nx.square(q.std), 2.0))
    return nx.shift(nx.sum_rows(nx.add(log_ratio, quad)), -0.5 * p.dim)


def kl(p: DiagGaussian, q: DiagGaussian):
    """KL(p || q) summed over dimensions and columns; a scalar node."""
    return nx.total(kl_columns(p, q))


def sym_kl_columns(p: DiagGaussian, q: DiagGaussian):
    return nx.scale(nx.add(kl_columns(p, q), kl_columns(q, p)), 0.5)


def sym_kl(p: DiagGaussian, q: DiagGaussian):
    return nx.total(sym_kl_columns(p, q))


def kl_numpy(mu_p, sd_p, mu_q, sd_q):
    """Closed-form KL on plain arrays; the last axis is the event dimension."""
    mu_p, sd_p, mu_q, sd_q = (np.asarray(a, dtype=np.float64) for a in (mu_p, sd_p, mu_q, sd_q))
    terms = np.log(sd_q / sd_p) + (sd_p**2 + (mu_p - mu_q) ** 2) / (2.0 * sd_q**2) - 0.5
    return terms.sum(axis=-1)
