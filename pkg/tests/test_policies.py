import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from clicklab.core import Query
from clicklab.errors import EnumerationCapError, InvalidInputError
from clicklab.policies import (DeterministicPolicy, MixturePolicy, ScoreNetwork,
                               ScoreNetworkPolicy, UniformPolicy, load_policy,
                               placement_logprob_grad, save_policy)


def net_policy(dim=3, seed=0, hidden=(32, 32)):
    return ScoreNetworkPolicy.init(dim, np.random.default_rng(seed), hidden)


def feature_query(n=4, dim=3, seed=1, qid=0):
    return Query(qid, np.random.default_rng(seed).standard_normal((n, dim)), np.zeros(n))


class TestPlacement:
    def test_deterministic_next_choice(self):
        p = DeterministicPolicy({0: (2, 0, 1)})
        assert p.placement_prob(Query.bare(0, 3), (2,), 0) == 1.0

    def test_uniform(self):
        assert UniformPolicy().placement_prob(Query.bare(0, 3), (), 1) == pytest.approx(1 / 3)

    def test_equal_scores(self):
        q = Query(0, np.ones((4, 3)), np.zeros(4))
        assert net_policy().placement_prob(q, (), 2) == pytest.approx(0.25)

    def test_already_placed(self):
        with pytest.raises(InvalidInputError):
            UniformPolicy().placement_prob(Query.bare(0, 3), (1,), 1)

    def test_ties_broken_by_doc_id(self):
        p = DeterministicPolicy.from_scores({0: [1.0, 2.0, 2.0, 0.5]})
        assert p.ranking(Query.bare(0, 4)) == (1, 2, 0, 3)


class TestRankingProb:
    def test_deterministic_own(self):
        p = DeterministicPolicy({0: (1, 0, 2)})
        assert p.ranking_prob(Query.bare(0, 3), (1, 0, 2)) == 1.0

    def test_uniform_full(self):
        assert UniformPolicy().ranking_prob(Query.bare(0, 3), (2, 0, 1)) == pytest.approx(1 / 6)

    def test_mixture(self):
        p = MixturePolicy(DeterministicPolicy({0: (0, 1)}), 0.3)
        assert p.ranking_prob(Query.bare(0, 2), (0, 1)) == pytest.approx(0.85)

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_sums_to_one(self, n):
        q = feature_query(n)
        for policy in (net_policy(), MixturePolicy(net_policy(), 0.2), UniformPolicy()):
            total = sum(policy.ranking_prob(q, r) for r in itertools.permutations(range(n)))
            assert total == pytest.approx(1.0, abs=1e-9)


class TestSampling:
    def test_deterministic(self, rng):
        p = DeterministicPolicy({0: (2, 1, 0)})
        assert p.sample_ranking(Query.bare(0, 3), 2, rng) == (2, 1)

    def test_uniform_frequencies(self, rng):
        q = Query.bare(0, 3)
        counts = {}
        for _ in range(100_000):
            r = UniformPolicy().sample_ranking(q, 3, rng)
            counts[r] = counts.get(r, 0) + 1
        assert len(counts) == 6
        assert all(abs(c / 100_000 - 1 / 6) < 0.01 for c in counts.values())

    def test_same_seed(self):
        q = feature_query()
        p = MixturePolicy(net_policy(), 0.1)
        a = p.sample_ranking(q, 3, np.random.default_rng(9))
        b = p.sample_ranking(q, 3, np.random.default_rng(9))
        assert a == b

    @pytest.mark.parametrize("make", [lambda: net_policy(seed=3),
                                      lambda: MixturePolicy(net_policy(seed=3), 0.3)])
    def test_chi_square_against_ranking_prob(self, make, rng):
        q = feature_query(3)
        policy = make()
        perms = list(itertools.permutations(range(3)))
        expected = np.array([policy.ranking_prob(q, r) for r in perms])
        draws = 20_000
        seen = dict.fromkeys(perms, 0)
        for _ in range(draws):
            seen[policy.sample_ranking(q, 3, rng)] += 1
        assert chisquare(list(seen.values()), expected * draws).pvalue > 1e-3

    def test_k_validated(self, rng):
        with pytest.raises(InvalidInputError):
            UniformPolicy().sample_ranking(Query.bare(0, 3), 0, rng)


class TestMixtureFloor:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 6), st.floats(0.01, 1.0), st.data())
    def test_floor(self, n, eps, data):
        q = feature_query(n)
        p = MixturePolicy(net_policy(hidden=(8,)), eps)
        prefix = data.draw(st.permutations(range(n)))[: data.draw(st.integers(0, n - 1))]
        probs = p.placement_probs(q, prefix)
        free = n - len(prefix)
        unplaced = [d for d in range(n) if d not in prefix]
        assert probs[unplaced].min() >= eps / free - 1e-12
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_epsilon_range(self):
        with pytest.raises(InvalidInputError):
            MixturePolicy(UniformPolicy(), 1.5)


class TestMarginals:
    @pytest.mark.parametrize("n, length", [(3, 3), (4, 2), (5, 5), (6, 3)])
    def test_dp_matches_enumeration(self, n, length):
        q = feature_query(n)
        for p in (MixturePolicy(net_policy(), 0.1), MixturePolicy(DeterministicPolicy({0: tuple(range(n))}), 0.4)):
            np.testing.assert_allclose(p.rank_marginals(q, length, "dp"),
                                       p.rank_marginals(q, length, "exact"), atol=1e-12)

    def test_enumeration_cap(self):
        q = feature_query(7)
        with pytest.raises(EnumerationCapError):
            net_policy().rank_marginals(q, 3)
        assert net_policy().rank_marginals(q, 3, "dp").sum(axis=0) == pytest.approx(np.ones(3))


class TestLogprobGrad:
    def test_single_unplaced_is_zero(self):
        q = feature_query(3)
        g = placement_logprob_grad(net_policy(), q, (0, 2), 1)
        assert np.all(g == 0)

    def test_finite_differences(self):
        q = feature_query(4)
        policy = net_policy(hidden=(6, 5))
        net = policy.network
        x0 = net.get_flat()
        g = placement_logprob_grad(policy, q, (2,), 0)
        h = 1e-5
        fd = np.empty_like(x0)
        for i in range(len(x0)):
            x = x0.copy()
            x[i] += h
            net.set_flat(x)
            up = np.log(policy.placement_prob(q, (2,), 0))
            x[i] -= 2 * h
            net.set_flat(x)
            down = np.log(policy.placement_prob(q, (2,), 0))
            fd[i] = (up - down) / (2 * h)
        net.set_flat(x0)
        scale = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(g - fd) / scale) < 1e-4

    def test_identical_features_symmetric(self):
        q = Query(0, np.array([[0.3, -1.0], [0.3, -1.0], [1.0, 2.0]]), np.zeros(3))
        policy = net_policy(dim=2)
        g0 = placement_logprob_grad(policy, q, (), 0)
        g1 = placement_logprob_grad(policy, q, (), 1)
        assert np.all(np.isfinite(g0))
        np.testing.assert_allclose(g0, g1, atol=1e-12)


def test_checkpoint_round_trip():
    q = feature_query(4)
    policy = MixturePolicy(net_policy(), 0.15)
    buf = io.StringIO()
    save_policy(policy, buf)
    assert "layer 0" in buf.getvalue()
    again = load_policy(io.StringIO(buf.getvalue()))
    assert again.epsilon == 0.15
    np.testing.assert_allclose(again.placement_probs(q, (1,)), policy.placement_probs(q, (1,)),
                               atol=1e-15)


def test_network_param_count():
    net = ScoreNetwork(5, (32, 32), np.random.default_rng(0))
    assert net.n_params == 5 * 32 + 32 + 32 * 32 + 32 + 32 + 1
