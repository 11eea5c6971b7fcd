"""
Tape autodiff and diagonal Gaussians
====================================

Build a small graph, pull gradients back through it, and compare them with
central differences.  Then look at the closed-form KL between diagonal
Gaussians next to a sampled estimate.
"""

import numpy as np

from abstract_goal import numerics as nx
from abstract_goal.gaussians import DiagGaussian, kl, reparam_sample, std_head, sym_kl

# Every value lives on a tape.  Leaves collect gradients, constants do not.
tape = nx.Tape()
W = tape.leaf(np.array([[0.5, -1.0], [2.0, 0.3]]), name="W")
x = tape.const(np.array([[1.0], [2.0]]))
b = tape.leaf(np.zeros((2, 1)), name="b")
y = nx.total(nx.tanh(nx.affine(W, x, b)))
nx.backward(y)
print("dy/dW =\n", W.grad)


# The same function through the finite-difference checker.
def f(t, leaves):
    return nx.total(nx.tanh(nx.affine(leaves["W"], t.const(x.value), leaves["b"])))


err = nx.finite_diff_check(f, {"W": W.value, "b": b.value})
print("max relative gradient error:", err)

# A width head keeps every sigma above a small floor.
raw = tape.const(np.array([[-50.0], [0.0], [3.0]]))
print("sigma from raw outputs:", std_head(raw).value.ravel())

# Closed-form KL against a sampled estimate.
p = DiagGaussian(tape.const(np.array([[0.0], [1.0]])), tape.const(np.array([[1.0], [0.5]])))
q = DiagGaussian(tape.const(np.array([[0.5], [0.0]])), tape.const(np.array([[2.0], [1.0]])))
rng = np.random.default_rng(0)
z = p.mean.value + p.std.value * rng.standard_normal((2, 200_000))


def logpdf(v, m, s):
    return np.sum(-0.5 * ((v - m) / s) ** 2 - np.log(s), axis=0)


est = np.mean(logpdf(z, p.mean.value, p.std.value) - logpdf(z, q.mean.value, q.std.value))
print("KL closed form %.5f, sampled %.5f" % (kl(p, q).item(), est))
print("symmetric KL, both orders:", sym_kl(p, q).item(), sym_kl(q, p).item())

# Reparameterized draws keep the noise fixed, so gradients reach mean and std.
eps = np.array([[0.3], [-1.2]])
s = reparam_sample(p, None, eps)
print("sample:", s.value.ravel())
