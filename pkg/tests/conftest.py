import numpy as np
import pytest

from abstract_goal.model import ModelConfig, init_params

TINY = dict(d_f=6, d_h=8, d_z=4, T=3, d_c=5, mlp_hidden=8)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY, Q=2, K=3)


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=1)


@pytest.fixture
def tiny_batch(tiny_cfg):
    rng = np.random.default_rng(42)
    xs = [rng.normal(size=(tiny_cfg.d_f, 2)) for _ in range(tiny_cfg.T)]
    labels = np.array([1, 4])
    return xs, labels


@pytest.fixture
def smooth_params(tiny_params):
    """Random nonzero biases keep every ReLU off its kink at h_0 = 0."""
    out = tiny_params.copy()
    rng = np.random.default_rng(11)
    for k in out.names():
        if ".b" in k:
            out.tensors[k] = rng.uniform(0.1, 0.5, out[k].shape) * rng.choice([-1, 1], out[k].shape)
    return out


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)`` logs one summary line for criterion ``n``, then asserts it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(n, ok, detail):
        lines.append((n, f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
