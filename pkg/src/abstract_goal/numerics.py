"""Define-by-run reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array.  Activations follow the column
convention: a single vector is ``n x 1`` and a batch of ``B`` vectors is
``n x B``, so the same graph code serves one sample or many.

A :class:`Tape` records nodes in creation order, which is already a
topological order, and :func:`backward` walks it once in reverse.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DomainError, EvaluationError, ShapeError

__all__ = [
    "Node",
    "Tape",
    "affine",
    "elementwise",
    "relu",
    "softplus",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "add",
    "sub",
    "mul",
    "div",
    "square",
    "scale",
    "shift",
    "concat",
    "slice_rows",
    "take_cols",
    "tile_cols",
    "sum_rows",
    "total",
    "mean",
    "log_softmax",
    "pick",
    "backward",
    "finite_diff_check",
    "stable_softplus",
    "stable_sigmoid",
]


def stable_softplus(v):
    """ln(1 + e^v) without overflow for large |v|."""
    v = np.asarray(v, dtype=np.float64)
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def stable_sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * v))


class Node:
    __slots__ = ("tape", "id", "value", "op", "parents", "requires_grad", "name", "_grad", "_backward")

    def __init__(self, tape, value, op, parents=(), backward_fn=None, requires_grad=None, name=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name
        self._grad = None
        self._backward = backward_fn
        self.id = tape._push(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def item(self):
        if self.value.size != 1:
            raise ContractError(f"item() on node of shape {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node(id={self.id}, op={self.op}{label}, shape={self.value.shape})"


class Tape:
    """Append-only list of nodes plus the generator used for sampling."""

    def __init__(self, seed=0):
        self.nodes: list[Node] = []
        self.rng_seed = seed
        self.rng = np.random.default_rng(seed)

    def _push(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, value, name=None, requires_grad=True):
        value = _as_matrix(value)
        return Node(self, value, "leaf", requires_grad=requires_grad, name=name)

    def const(self, value, name=None):
        return self.leaf(value, name=name, requires_grad=False)

    def __len__(self):
        return len(self.nodes)

    def release(self):
        """Drop recorded nodes so their buffers are freed without waiting for
        the cycle collector (nodes and tape reference each other)."""
        for node in self.nodes:
            node._backward = None
            node._grad = None
        self.nodes.clear()


def _as_matrix(value):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _accum(node, g, owned=True):
    """Add ``g`` into ``node``'s gradient.  ``owned=False`` when ``g`` may be
    shared with another node and must not be adopted as the buffer."""
    if not node.requires_grad:
        return
    if node._grad is None:
        node._grad = g if owned and g.flags.writeable and g.dtype == np.float64 else np.array(g, dtype=np.float64)
    else:
        node._grad += g


def _make(tape_src, value, op, parents, backward_fn):
    return Node(tape_src.tape, value, op, parents, backward_fn)


def affine(W, x, b):
    """``W @ x + b`` with ``b`` broadcast across the columns of ``x``."""
    m, n = W.shape
    if x.shape[0] != n or b.shape != (m, 1):
        raise ShapeError(
            f"affine: W {W.shape} x {x.shape} + b {b.shape} is not conformable"
        )
    out = W.value @ x.value + b.value

    def bw(g):
        if W.requires_grad:
            _accum(W, g @ x.value.T)
        if x.requires_grad:
            _accum(x, W.value.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=1, keepdims=True))

    return _make(W, out, "affine", (W, x, b), bw)


_UNARY = ("relu", "softplus", "tanh", "sigmoid", "exp", "log", "square")
_BINARY = ("add", "sub", "mul", "div")


def elementwise(kind, *args):
    if kind in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{kind} takes one operand, got {len(args)}")
        return _unary(kind, args[0])
    if kind in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{kind} takes two operands, got {len(args)}")
        return _binary(kind, *args)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def _unary(kind, x):
    v = x.value
    if kind == "relu":
        out = np.maximum(v, 0.0)
        deriv = lambda: (v > 0).astype(np.float64)
    elif kind == "softplus":
        out = stable_softplus(v)
        deriv = lambda: stable_sigmoid(v)
    elif kind == "tanh":
        out = np.tanh(v)
        deriv = lambda: 1.0 - out * out
    elif kind == "sigmoid":
        out = stable_sigmoid(v)
        deriv = lambda: out * (1.0 - out)
    elif kind == "exp":
        out = np.exp(v)
        deriv = lambda: out
    elif kind == "log":
        if np.any(v <= 0):
            raise DomainError(f"log of non-positive input (min {v.min():.6g})")
        out = np.log(v)
        deriv = lambda: 1.0 / v
    else:  # square
        out = v * v
        deriv = lambda: 2.0 * v

    def bw(g):
        _accum(x, g * deriv())

    return _make(x, out, kind, (x,), bw)


def _binary(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: operand shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    if kind == "add":
        out = av + bv

        def bw(g):
            _accum(a, g, owned=False)
            _accum(b, g, owned=False)
    elif kind == "sub":
        out = av - bv

        def bw(g):
            _accum(a, g, owned=False)
            _accum(b, -g)
    elif kind == "mul":
        out = av * bv

        def bw(g):
            _accum(a, g * bv)
            _accum(b, g * av)
    else:
        if np.any(bv == 0):
            raise DomainError("div by zero")
        out = av / bv

        def bw(g):
            _accum(a, g / bv)
            _accum(b, -g * av / (bv * bv))

    return _make(a, out, kind, (a, b), bw)


def relu(x):
    return elementwise("relu", x)


def softplus(x):
    return elementwise("softplus", x)


def tanh(x):
    return elementwise("tanh", x)


def sigmoid(x):
    return elementwise("sigmoid", x)


def exp(x):
    return elementwise("exp", x)


def log(x):
    return elementwise("log", x)


def square(x):
    return elementwise("square", x)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


def scale(x, c):
    c = float(c)

    def bw(g):
        _accum(x, c * g)

    return _make(x, c * x.value, "scale", (x,), bw)


def shift(x, c):
    c = float(c)

    def bw(g):
        _accum(x, g, owned=False)

    return _make(x, x.value + c, "shift", (x,), bw)


def concat(a, b):
    """Stack two column blocks vertically (vector concatenation per column)."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat: cannot stack {a.shape} on {b.shape}")
    na = a.shape[0]
    out = np.vstack([a.value, b.value])

    def bw(g):
        _accum(a, g[:na])
        _accum(b, g[na:])

    return _make(a, out, "concat", (a, b), bw)


def slice_rows(x, start, stop):
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    out = x.value[start:stop].copy()

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.value)
            full[start:stop] = g
            _accum(x, full)

    return _make(x, out, "slice_rows", (x,), bw)


def take_cols(x, idx):
    """Gather columns ``x[:, idx]``; repeated indices accumulate on the way back."""
    idx = np.asarray(idx, dtype=np.intp)
    out = x.value[:, idx]

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.value)
            np.add.at(full.T, idx, g.T)
            _accum(x, full)

    return _make(x, out, "take_cols", (x,), bw)


def tile_cols(x, reps):
    """Horizontal stack of ``reps`` copies of ``x``."""
    B = x.shape[1]
    out = np.tile(x.value, (1, reps))

    def bw(g):
        _accum(x, g.reshape(g.shape[0], reps, B).sum(axis=1))

    return _make(x, out, "tile_cols", (x,), bw)


def sum_rows(x):
    """Column sums, ``1 x B``."""
    out = x.value.sum(axis=0, keepdims=True)

    def bw(g):
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(x, out, "sum_rows", (x,), bw)


def total(x):
    out = np.array([[x.value.sum()]])

    def bw(g):
        _accum(x, np.full(x.shape, g[0, 0]))

    return _make(x, out, "total", (x,), bw)


def mean(x):
    n = x.value.size
    if n == 0:
        raise ShapeError("mean of empty node")
    out = np.array([[x.value.sum() / n]])

    def bw(g):
        _accum(x, np.full(x.shape, g[0, 0] / n))

    return _make(x, out, "mean", (x,), bw)


def log_softmax(x):
    """Column-wise log-softmax with max subtraction."""
    v = x.value
    if v.shape[0] == 0:
        raise ShapeError("log_softmax of empty vector")
    shifted = v - v.max(axis=0, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))

    def bw(g):
        _accum(x, g - np.exp(out) * g.sum(axis=0, keepdims=True))

    return _make(x, out, "log_softmax", (x,), bw)


def pick(x, idx):
    """``out[0, j] = x[idx[j], j]``; used to read the true-class log-probability."""
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    if idx.shape[0] != x.shape[1]:
        raise ShapeError(f"pick: {idx.shape[0]} indices for {x.shape[1]} columns")
    cols = np.arange(x.shape[1])
    out = x.value[idx, cols].reshape(1, -1)

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.value)
            full[idx, cols] = g[0]
            _accum(x, full)

    return _make(x, out, "pick", (x,), bw)


def backward(root):
    """Accumulate d(root)/d(node) into every node that requires a gradient.

    Returns ``{node_id: grad}`` for the nodes that were reached.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    tape = root.tape
    for node in tape.nodes:
        node._grad = None
    root._grad = np.ones((1, 1))
    for node in reversed(tape.nodes[: root.id + 1]):
        if node._grad is None or node._backward is None or not node.requires_grad:
            continue
        node._backward(node._grad)
    return {n.id: n._grad for n in tape.nodes if n._grad is not None}


def finite_diff_check(
    f: Callable[[Tape, Mapping[str, Node]], Node],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> float:
    """Max over parameter entries of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` builds a scalar node from leaves registered on a fresh tape seeded
    with ``seed``, so any sampling inside ``f`` is identical across the
    perturbed evaluations.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    names = list(params) if names is None else list(names)

    def run(values):
        tape = Tape(seed)
        leaves = {k: tape.leaf(v, name=k) for k, v in values.items()}
        return f(tape, leaves), leaves

    root, leaves = run(params)
    backward(root)
    analytic = {k: leaves[k].grad for k in names}

    worst = 0.0
    for k in names:
        base = params[k]
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = run(params)[0].item()
            flat[i] = orig - step
            down = run(params)[0].item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise EvaluationError(f"non-finite objective perturbing {k}[{i}]")
            numeric = (up - down) / (2.0 * step)
            a = analytic[k].reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return worst
