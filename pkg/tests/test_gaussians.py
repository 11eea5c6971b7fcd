import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from abstract_goal import numerics as nx
from abstract_goal.errors import ShapeError
from abstract_goal.gaussians import (
    SIGMA_FLOOR, DiagGaussian, kl, kl_numpy, reparam_sample, standard_normal, sym_kl,
)


def gauss(tape, mu, sd, leaf=True):
    make = tape.leaf if leaf else tape.const
    return DiagGaussian(make(np.asarray(mu, float).reshape(-1, 1)), make(np.asarray(sd, float).reshape(-1, 1)))


def mc_kl(mu_p, sd_p, mu_q, sd_q, n, seed):
    """Monte Carlo E_p[ln p - ln q] using scipy densities."""
    rng = np.random.default_rng(seed)
    x = mu_p + sd_p * rng.standard_normal((n, mu_p.size))
    lp = stats.norm.logpdf(x, mu_p, sd_p).sum(axis=1)
    lq = stats.norm.logpdf(x, mu_q, sd_q).sum(axis=1)
    return float(np.mean(lp - lq))


class TestReparamSample:
    def test_floor_width_returns_mean(self):
        t = nx.Tape()
        d = gauss(t, [1.0, -2.0], [SIGMA_FLOOR] * 2)
        eps = np.array([[0.7], [-1.3]])
        z = reparam_sample(d, None, eps).value
        assert np.all(np.abs(z - d.mean.value) <= SIGMA_FLOOR * np.abs(eps) + 1e-15)

    def test_moments_standard_normal(self):
        t = nx.Tape()
        n = 100_000
        d = DiagGaussian(t.const(np.zeros((3, n))), t.const(np.ones((3, n))))
        z = reparam_sample(d, np.random.default_rng(0)).value
        assert np.all(np.abs(z.mean(axis=1)) < 0.02)
        assert np.all((z.std(axis=1) > 0.98) & (z.std(axis=1) < 1.02))

    def test_seeded_determinism(self):
        t = nx.Tape()
        d = gauss(t, [0.0, 1.0], [1.0, 2.0])
        a = reparam_sample(d, np.random.default_rng(5)).value
        b = reparam_sample(d, np.random.default_rng(5)).value
        assert np.array_equal(a, b)

    def test_gradient_flows_to_mean_and_std_only(self):
        t = nx.Tape()
        d = gauss(t, [0.5], [2.0])
        eps = np.array([[1.5]])
        nx.backward(nx.total(reparam_sample(d, None, eps)))
        assert d.mean.grad[0, 0] == 1.0
        assert d.std.grad[0, 0] == 1.5

    def test_per_sample_generators_are_batch_independent(self):
        gens = lambda: [np.random.default_rng(s) for s in (1, 2, 3)]
        both = standard_normal(gens(), 4, 6)
        alone = standard_normal([np.random.default_rng(2)], 4, 2)
        np.testing.assert_array_equal(both[:, 1::3], alone)


class TestKL:
    def test_identical_is_zero(self):
        t = nx.Tape()
        assert kl(gauss(t, [0.0], [1.0]), gauss(t, [0.0], [1.0])).item() == 0.0

    def test_unit_shift(self):
        t = nx.Tape()
        assert kl(gauss(t, [1.0], [1.0]), gauss(t, [0.0], [1.0])).item() == pytest.approx(0.5, abs=1e-15)

    def test_dimension_mismatch(self):
        t = nx.Tape()
        with pytest.raises(ShapeError):
            kl(gauss(t, [0.0, 0.0], [1.0, 1.0]), gauss(t, [0.0], [1.0]))

    @pytest.mark.parametrize("seed", range(3))
    def test_monte_carlo_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        mu_p, mu_q = rng.normal(size=8), rng.normal(size=8)
        sd_p, sd_q = rng.uniform(0.5, 1.5, 8), rng.uniform(0.5, 1.5, 8)
        t = nx.Tape()
        closed = kl(gauss(t, mu_p, sd_p), gauss(t, mu_q, sd_q)).item()
        est = mc_kl(mu_p, sd_p, mu_q, sd_q, 200_000, seed)
        assert abs(closed - est) / closed < 0.01

    def test_gradients_all_four_vectors(self):
        rng = np.random.default_rng(9)
        params = {
            "mp": rng.normal(size=(4, 1)), "sp": rng.uniform(0.5, 2, (4, 1)),
            "mq": rng.normal(size=(4, 1)), "sq": rng.uniform(0.5, 2, (4, 1)),
        }
        f = lambda t, l: kl(DiagGaussian(l["mp"], l["sp"]), DiagGaussian(l["mq"], l["sq"]))
        assert nx.finite_diff_check(f, params) < 1e-6

    def test_numpy_variant_agrees(self):
        rng = np.random.default_rng(2)
        mp, mq = rng.normal(size=5), rng.normal(size=5)
        sp, sq = rng.uniform(0.5, 2, 5), rng.uniform(0.5, 2, 5)
        t = nx.Tape()
        assert kl(gauss(t, mp, sp), gauss(t, mq, sq)).item() == pytest.approx(kl_numpy(mp, sp, mq, sq), rel=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-5, 5), st.floats(0.05, 5)),
                    min_size=1, max_size=6))
    def test_nonnegative(self, rows):
        mp, sp, mq, sq = (np.array(c) for c in zip(*rows))
        t = nx.Tape()
        assert kl(gauss(t, mp, sp), gauss(t, mq, sq)).item() >= -1e-12


class TestSymKL:
    def test_self_is_zero(self):
        t = nx.Tape()
        p = gauss(t, [0.3, -1.0], [0.5, 2.0])
        assert sym_kl(p, p).item() == 0.0

    def test_bit_symmetric(self):
        rng = np.random.default_rng(4)
        t = nx.Tape()
        p = gauss(t, rng.normal(size=8), rng.uniform(0.2, 3, 8))
        q = gauss(t, rng.normal(size=8), rng.uniform(0.2, 3, 8))
        assert sym_kl(p, q).item() == sym_kl(q, p).item()

    def test_unit_shift(self):
        t = nx.Tape()
        assert sym_kl(gauss(t, [0.0], [1.0]), gauss(t, [1.0], [1.0])).item() == pytest.approx(0.5, abs=1e-15)

    def test_dimension_mismatch(self):
        t = nx.Tape()
        with pytest.raises(ShapeError):
            sym_kl(gauss(t, [0.0, 0.0], [1.0, 1.0]), gauss(t, [0.0], [1.0]))
