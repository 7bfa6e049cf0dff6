import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lpo.policy import (MixturePolicy, SoftmaxPolicy, base_rule, dumps, loads,
                        mixture_sample_component, npg_step, prob, sample_action)


def frequencies(draw, n, k):
    return np.bincount([draw() for _ in range(n)], minlength=k) / n


def peaked(n_actions, action, gap=1e3):
    c = np.zeros((1, n_actions))
    c[0, action] = gap
    return SoftmaxPolicy(np.ones((1, n_actions), bool), c)


class TestProbabilities:
    def test_fresh_uniform(self):
        assert np.allclose(prob(SoftmaxPolicy.uniform(2, 4), 0), 0.25)

    def test_unknown_state_base_rule(self):
        kp = np.array([[True, False, True, False]])
        assert prob(SoftmaxPolicy(kp), 0).tolist() == [0.0, 0.5, 0.0, 0.5]

    def test_all_actions_unknown(self):
        assert np.allclose(base_rule(np.zeros((1, 3), bool)), 1 / 3)

    def test_softmax_arithmetic(self):
        p = SoftmaxPolicy(np.ones((1, 2), bool), [[math.log(2), 0.0]])
        assert np.allclose(prob(p, 0), [2 / 3, 1 / 3], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            SoftmaxPolicy(np.ones((2, 2), bool), np.zeros((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e6))
    def test_normalised_and_finite(self, seed, scale):
        rng = np.random.default_rng(seed)
        kp = rng.random(size=(5, 3)) < 0.8
        p = SoftmaxPolicy(kp, rng.uniform(-scale, scale, size=(5, 3)))
        t = p.table
        assert np.all(np.isfinite(t))
        assert np.allclose(t.sum(axis=1), 1.0, atol=1e-12)
        known = kp.all(axis=1)
        assert np.all(t[known] >= 0)

    def test_strictly_positive_at_known(self):
        rng = np.random.default_rng(0)
        p = SoftmaxPolicy(np.ones((4, 3), bool), rng.normal(size=(4, 3)))
        assert np.all(p.table > 0)


class TestNpgStep:
    def test_zero_eta_identity(self):
        rng = np.random.default_rng(1)
        p = SoftmaxPolicy(np.ones((3, 2), bool), rng.normal(size=(3, 2)))
        assert np.array_equal(npg_step(p, rng.normal(size=(3, 2)), 0.0).table, p.table)

    def test_one_step(self):
        p = npg_step(SoftmaxPolicy.uniform(1, 2), np.array([[1.0, 0.0]]), math.log(2))
        assert np.allclose(p.table, [[2 / 3, 1 / 3]], atol=1e-12)

    def test_negative_eta(self):
        with pytest.raises(ValueError):
            npg_step(SoftmaxPolicy.uniform(1, 2), np.zeros((1, 2)), -1.0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), eta=st.floats(0.0, 5.0))
    def test_additivity(self, seed, eta):
        rng = np.random.default_rng(seed)
        kp = rng.random(size=(4, 3)) < 0.7
        p = SoftmaxPolicy(kp, rng.normal(size=(4, 3)))
        q1, q2 = rng.normal(size=(2, 4, 3))
        two = npg_step(npg_step(p, q1, eta), q2, eta)
        one = npg_step(p, q1 + q2, eta)
        assert np.max(np.abs(two.table - one.table)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_unknown_states_untouched(self, seed):
        rng = np.random.default_rng(seed)
        kp = rng.random(size=(5, 2)) < 0.6
        p = SoftmaxPolicy(kp)
        q = npg_step(p, rng.normal(scale=10, size=(5, 2)), 3.0)
        unknown = ~kp.all(axis=1)
        assert np.array_equal(q.table[unknown], base_rule(kp)[unknown])

    def test_accepts_critic_object(self):
        class C:
            q_table = np.array([[1.0, 0.0]])
        p = npg_step(SoftmaxPolicy.uniform(1, 2), C(), math.log(2))
        assert np.allclose(p.table, [[2 / 3, 1 / 3]])


class TestSampling:
    def test_saturated(self, rng):
        p = peaked(3, 1)
        f = frequencies(lambda: sample_action(p, 0, rng), 10_000, 3)
        assert f[1] > 0.999

    def test_uniform_frequencies(self, rng):
        p = SoftmaxPolicy.uniform(1, 4)
        counts = np.bincount([sample_action(p, 0, rng) for _ in range(100_000)], minlength=4)
        assert np.allclose(counts / 1e5, 0.25, atol=0.01)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_mixture_of_peaked(self, rng):
        m = MixturePolicy([peaked(2, 0), peaked(2, 1)])
        f = frequencies(lambda: sample_action(m, 0, rng), 20_000, 2)
        assert np.allclose(f, 0.5, atol=0.02)


class TestMixture:
    def test_singleton(self, rng):
        p = SoftmaxPolicy.uniform(2, 2)
        assert mixture_sample_component(MixturePolicy([p]), rng) is p

    def test_four_components(self, rng):
        comps = [SoftmaxPolicy.uniform(1, 2) for _ in range(4)]
        m = MixturePolicy(comps)
        idx = {id(c): i for i, c in enumerate(comps)}
        counts = np.bincount([idx[id(mixture_sample_component(m, rng))] for _ in range(100_000)],
                             minlength=4)
        assert np.allclose(counts / 1e5, 0.25, atol=0.01)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_nested(self, rng):
        a, b, c = (SoftmaxPolicy.uniform(1, 2) for _ in range(3))
        m = MixturePolicy([MixturePolicy([a, b]), c])
        idx = {id(a): 0, id(b): 1, id(c): 2}
        f = frequencies(lambda: idx[id(mixture_sample_component(m, rng))], 100_000, 3)
        assert np.allclose(f, [0.25, 0.25, 0.5], atol=0.01)
        _, w = m.leaves()
        assert np.allclose(sorted(w), [0.25, 0.25, 0.5])

    def test_table_is_average(self):
        rng = np.random.default_rng(2)
        ps = [SoftmaxPolicy(np.ones((3, 2), bool), rng.normal(size=(3, 2))) for _ in range(3)]
        m = MixturePolicy(ps[:1])
        for p in ps[1:]:
            m.append(p)
        assert np.allclose(m.table, np.mean([p.table for p in ps], axis=0))

    def test_repeated_component(self):
        p = SoftmaxPolicy.uniform(1, 2)
        m = MixturePolicy([p, p, p])
        comps, w = m.leaves()
        assert len(comps) == 1 and w[0] == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            MixturePolicy([])

    def test_serialisation_round_trip(self):
        rng = np.random.default_rng(3)
        kp = rng.random(size=(3, 2)) < 0.7
        p = SoftmaxPolicy(kp, rng.normal(size=(3, 2)))
        m = MixturePolicy([p, MixturePolicy([SoftmaxPolicy.uniform(3, 2), p])])
        back = loads(dumps(m))
        assert np.allclose(back.table, m.table)
        assert np.array_equal(loads(dumps(p)).known_pairs, kp)
