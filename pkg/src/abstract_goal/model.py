"""The abstract-goal network.

Parameters live in :class:`ModelParams` as plain arrays.  A forward pass binds
them to a :class:`~abstract_goal.numerics.Tape` through :class:`GoalNet`,
whose methods build the graph for a batch of column vectors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, FormatError, ShapeError
from .gaussians import DiagGaussian, reparam_sample, standard_normal, std_head

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_f: int
    d_c: int
    d_h: int = 256
    d_z: int = 128
    mlp_hidden: int = 256
    Q: int = 3
    K: int = 10
    T: int = 6

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"ModelConfig.{f.name} must be an integer >= 1, got {v!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in d.items() if k in known})


# (kind, input_dim, output_dim) per parameter group; dims are resolved per config.
def _layout(cfg):
    dh, dz, df, dc = cfg.d_h, cfg.d_z, cfg.d_f, cfg.d_c
    return [
        ("phi_prior.mu", "mlp", dh, dz),
        ("phi_prior.sigma", "mlp", dh, dz),
        ("phi_pos", "dual", 2 * dz, dz),
        ("phi_x", "linear", df, dz),
        ("phi_h", "linear", dh, dz),
        ("phi_z", "linear", dz, dz),
        ("gru", "gru", 2 * dz, dh),
        ("phi_O", "mlp", 2 * dz, dh),
        ("phi_N", "dual", 2 * dz, dz),
        ("phi_aO", "mlp", dh, dz),
        ("phi_aN", "mlp", dz, dz),
        ("phi_Nq", "dual", dz, dz),
        ("phi_Nr", "dual", 2 * dz, dz),
        ("phi_c", "mlp", dz, dc),
    ]


def _shapes(cfg):
    H = cfg.mlp_hidden
    out = []
    for group, kind, n_in, n_out in _layout(cfg):
        if kind == "linear":
            out += [(f"{group}.W", (n_out, n_in)), (f"{group}.b", (n_out, 1))]
        elif kind == "mlp":
            out += [
                (f"{group}.W1", (H, n_in)), (f"{group}.b1", (H, 1)),
                (f"{group}.W2", (n_out, H)), (f"{group}.b2", (n_out, 1)),
            ]
        elif kind == "dual":
            out += [
                (f"{group}.W1", (H, n_in)), (f"{group}.b1", (H, 1)),
                (f"{group}.Wmu", (n_out, H)), (f"{group}.bmu", (n_out, 1)),
                (f"{group}.Wsig", (n_out, H)), (f"{group}.bsig", (n_out, 1)),
            ]
        else:
            out += [
                (f"{group}.Wx", (3 * n_out, n_in)), (f"{group}.Wh", (3 * n_out, n_out)),
                (f"{group}.bx", (3 * n_out, 1)), (f"{group}.bh", (3 * n_out, 1)),
            ]
    return out


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count, independent of allocation."""
    H, dh = cfg.mlp_hidden, cfg.d_h
    n = 0
    for _, kind, i, o in _layout(cfg):
        if kind == "linear":
            n += o * i + o
        elif kind == "mlp":
            n += H * i + H + o * H + o
        elif kind == "dual":
            n += H * i + H + 2 * (o * H + o)
        else:
            n += 3 * dh * i + 3 * dh * dh + 6 * dh
    return n


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def size(self):
        return sum(a.size for a in self.tensors.values())

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(cfg):
        group, leaf = name.rsplit(".", 1)
        if group == "gru":
            bound = 1.0 / np.sqrt(cfg.d_h)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf.startswith("W"):
            bound = 1.0 / np.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(cfg, tensors)


def zero_params(cfg: ModelConfig) -> ModelParams:
    return ModelParams(cfg, {name: np.zeros(shape) for name, shape in _shapes(cfg)})


SIGMA_HEADS = ("phi_prior.sigma.W2", "phi_prior.sigma.b2") + tuple(
    f"{g}.{p}" for g in ("phi_pos", "phi_N", "phi_Nq", "phi_Nr") for p in ("Wsig", "bsig")
)


def collapse_sigma(params: ModelParams, bias=-60.0) -> ModelParams:
    """Copy of ``params`` whose standard-deviation heads all sit at the floor."""
    out = params.copy()
    for name in SIGMA_HEADS:
        out.tensors[name] = np.zeros_like(out.tensors[name]) + (bias if name.endswith(("b2", "bsig")) else 0.0)
    return out


@dataclass
class EncodeTrace:
    priors: list
    posteriors: list
    zs: list
    hs: list
    eps: list
    xs: list

    @property
    def T(self):
        return len(self.priors)


class GoalNet:
    """Graph builder over one tape.  Every method takes ``n x B`` column batches."""

    def __init__(self, params: ModelParams, tape: nx.Tape, trainable=True):
        self.cfg = params.config
        self.tape = tape
        make = tape.leaf if trainable else tape.const
        self.p = {k: make(v, name=k) for k, v in params.tensors.items()}

    @classmethod
    def bind(cls, cfg: ModelConfig, leaves, tape):
        """Wrap already-registered leaf nodes (e.g. from a gradient check)."""
        net = cls.__new__(cls)
        net.cfg, net.tape, net.p = cfg, tape, dict(leaves)
        return net

    def leaves(self):
        return self.p

    def _check(self, node, rows, what):
        if node.shape[0] != rows:
            raise ShapeError(f"{what}: expected {rows} rows, got shape {node.shape}")

    def _node(self, x):
        return x if isinstance(x, nx.Node) else self.tape.const(x)

    def linear(self, g, x):
        return nx.affine(self.p[f"{g}.W"], x, self.p[f"{g}.b"])

    def mlp(self, g, x):
        hid = nx.relu(nx.affine(self.p[f"{g}.W1"], x, self.p[f"{g}.b1"]))
        return nx.affine(self.p[f"{g}.W2"], hid, self.p[f"{g}.b2"])

    def dual(self, g, x):
        hid = nx.relu(nx.affine(self.p[f"{g}.W1"], x, self.p[f"{g}.b1"]))
        mu = nx.affine(self.p[f"{g}.Wmu"], hid, self.p[f"{g}.bmu"])
        sd = std_head(nx.affine(self.p[f"{g}.Wsig"], hid, self.p[f"{g}.bsig"]))
        return DiagGaussian(mu, sd)

    def gru_step(self, h, inp):
        d = self.cfg.d_h
        gx = nx.affine(self.p["gru.Wx"], inp, self.p["gru.bx"])
        gh = nx.affine(self.p["gru.Wh"], h, self.p["gru.bh"])
        reset = nx.sigmoid(nx.add(nx.slice_rows(gx, 0, d), nx.slice_rows(gh, 0, d)))
        update = nx.sigmoid(nx.add(nx.slice_rows(gx, d, 2 * d), nx.slice_rows(gh, d, 2 * d)))
        cand = nx.tanh(nx.add(nx.slice_rows(gx, 2 * d, 3 * d), nx.mul(reset, nx.slice_rows(gh, 2 * d, 3 * d))))
        # h' = (1 - u) * n + u * h
        return nx.add(cand, nx.mul(update, nx.sub(h, cand)))

    def prior_dist(self, h_prev):
        h_prev = self._node(h_prev)
        self._check(h_prev, self.cfg.d_h, "prior_dist h_prev")
        mu = self.mlp("phi_prior.mu", h_prev)
        sd = std_head(self.mlp("phi_prior.sigma", h_prev))
        return DiagGaussian(mu, sd)

    def _posterior(self, fx, h_prev):
        return self.dual("phi_pos", nx.concat(fx, self.linear("phi_h", h_prev)))

    def posterior_dist(self, x_t, h_prev):
        x_t, h_prev = self._node(x_t), self._node(h_prev)
        self._check(x_t, self.cfg.d_f, "posterior_dist x_t")
        self._check(h_prev, self.cfg.d_h, "posterior_dist h_prev")
        return self._posterior(self.linear("phi_x", x_t), h_prev)

    def recur(self, h_prev, fx, z):
        return self.gru_step(h_prev, nx.concat(fx, self.linear("phi_z", z)))

    def encode(self, xs, rng) -> EncodeTrace:
        """Run the recurrence over ``xs`` (length-T list of ``d_f x B`` arrays)."""
        if len(xs) == 0:
            raise ContractError("encode needs at least one observed step")
        xs = [self._node(x) for x in xs]
        B = xs[0].shape[1]
        h = self.tape.const(np.zeros((self.cfg.d_h, B)))
        trace = EncodeTrace([], [], [], [h], [], xs)
        for x in xs:
            self._check(x, self.cfg.d_f, "encode x_t")
            fx = self.linear("phi_x", x)
            prior = self.prior_dist(h)
            post = self._posterior(fx, h)
            eps = standard_normal(rng, self.cfg.d_z, B)
            z = reparam_sample(prior, rng, eps)
            h = self.recur(h, fx, z)
            trace.priors.append(prior)
            trace.posteriors.append(post)
            trace.zs.append(z)
            trace.hs.append(h)
            trace.eps.append(eps)
        return trace

    @staticmethod
    def feature_goal(trace: EncodeTrace) -> DiagGaussian:
        return trace.priors[-1]

    def observed_action_rep(self, z_T, h_T):
        z_T, h_T = self._node(z_T), self._node(h_T)
        self._check(z_T, self.cfg.d_z, "observed_action_rep z_T")
        self._check(h_T, self.cfg.d_h, "observed_action_rep h_T")
        return self.mlp("phi_O", nx.concat(self.linear("phi_z", z_T), self.linear("phi_h", h_T)))

    def next_action_dist(self, h_T, a_O):
        h_T, a_O = self._node(h_T), self._node(a_O)
        self._check(h_T, self.cfg.d_h, "next_action_dist h_T")
        self._check(a_O, self.cfg.d_h, "next_action_dist a_O")
        return self.dual("phi_N", nx.concat(self.linear("phi_h", h_T), self.mlp("phi_aO", a_O)))

    def action_goal_prior(self, a_N):
        a_N = self._node(a_N)
        self._check(a_N, self.cfg.d_z, "action_goal_prior a_N")
        return self.dual("phi_Nq", self.mlp("phi_aN", a_N))

    def action_goal_posterior(self, a_N, a_O):
        a_N, a_O = self._node(a_N), self._node(a_O)
        self._check(a_N, self.cfg.d_z, "action_goal_posterior a_N")
        self._check(a_O, self.cfg.d_h, "action_goal_posterior a_O")
        return self.dual("phi_Nr", nx.concat(self.mlp("phi_aN", a_N), self.mlp("phi_aO", a_O)))

    def classify(self, a_N):
        a_N = self._node(a_N)
        self._check(a_N, self.cfg.d_z, "classify a_N")
        return self.mlp("phi_c", a_N)

    def classify_observed(self, a_O):
        """Classifier for the plain VRNN baseline: project ``a_O`` then score."""
        a_O = self._node(a_O)
        self._check(a_O, self.cfg.d_h, "classify_observed a_O")
        return self.classify(self.mlp("phi_aO", a_O))


def stack_features(samples_features):
    """List of ``T x d_f`` arrays -> length-T list of ``d_f x B`` arrays."""
    arr = np.stack([np.asarray(f, dtype=np.float64) for f in samples_features], axis=2)
    return [arr[t] for t in range(arr.shape[0])]


# -- checkpoint file ---------------------------------------------------------

def save_checkpoint(params: ModelParams, path, rng_seed=0):
    header = {"format_version": FORMAT_VERSION, **params.config.to_dict(), "rng_seed": int(rng_seed)}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name, arr in params.tensors.items():
            raw = name.encode("utf-8")
            rows, cols = arr.shape
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, header)``."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})", line=1) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    cfg = ModelConfig.from_dict(header)
    pos = nl + 1
    tensors = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            nbytes = 8 * rows * cols
            if pos + nbytes > len(data):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except struct.error:
        raise FormatError(f"{path}: truncated checkpoint") from None
    expected = dict(_shapes(cfg))
    if set(expected) != set(tensors):
        raise FormatError(f"{path}: tensor names do not match the configured model")
    for k, shape in expected.items():
        if tensors[k].shape != shape:
            raise FormatError(f"{path}: tensor {k!r} has shape {tensors[k].shape}, expected {shape}")
    return ModelParams(cfg, {k: tensors[k] for k in expected}), header
