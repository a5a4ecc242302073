import io

import numpy as np
import pytest

from clicklab.core import (ClickModel, InteractionLog, InteractionRecord, Query,
                           QueryDistribution)
from clicklab.errors import EnumerationCapError, InvalidInputError, SupportViolationError
from clicklab.estimators import check_support, compute_exposure
from clicklab.logopt import (OptimizerConfig, VarianceContext, approx_variance_gradient,
                             estimator_moments, exact_variance, exact_variance_gradient, mc_rho,
                             optimize_logging_policy, sample_rankings, train_logging_policy)
from clicklab.policies import (DeterministicPolicy, MixturePolicy, ScoreNetwork,
                               ScoreNetworkPolicy, UniformPolicy)

Q2 = Query.bare(0, 2)
P1 = DeterministicPolicy({0: (0, 1)})
P2 = DeterministicPolicy({0: (1, 0)})
THETA2 = np.array([1.0, 0.5])


def two_doc_ctx(delta_hat=0.5, M=32):
    lam = compute_exposure(P1, P1, P2, Q2, THETA2).lam
    return VarianceContext(delta_hat, THETA2, {0: np.array([1.0, 0.0])}, {0: lam}, M)


def random_instance(n, seed, M=32, hidden=(8, 8)):
    rng = np.random.default_rng(seed)
    q = Query(1, rng.standard_normal((n, 3)), np.zeros(n))
    theta = np.sort(rng.uniform(0.05, 0.95, n))[::-1]
    zeta = rng.uniform(0.05, 0.95, n)
    a, b = (DeterministicPolicy({1: tuple(rng.permutation(n))}) for _ in range(2))
    lam = compute_exposure(a, a, b, q, theta).lam
    ctx = VarianceContext(float(lam @ zeta), theta, {1: zeta}, {1: lam}, M)
    policy = MixturePolicy(ScoreNetworkPolicy.init(3, rng, hidden), 0.1)
    return q, ctx, policy


def fd_gradient(policy, ctx, q, h=1e-4):
    net = policy.base.network
    x0 = net.get_flat()
    out = np.empty_like(x0)
    for i in range(len(x0)):
        x = x0.copy()
        x[i] += h
        net.set_flat(x)
        up = exact_variance(policy, ctx, q)
        x[i] -= 2 * h
        net.set_flat(x)
        out[i] = (up - exact_variance(policy, ctx, q)) / (2 * h)
    net.set_flat(x0)
    return out


class TestExactVariance:
    def test_deterministic_logging_is_zero(self):
        assert exact_variance(P1, two_doc_ctx(), Q2) == pytest.approx(0.0, abs=1e-15)

    def test_uniform_logging(self):
        assert exact_variance(UniformPolicy(), two_doc_ctx(), Q2) == pytest.approx(1 / 12)

    def test_no_exposure_difference(self):
        ctx = VarianceContext(0.0, THETA2, {0: np.array([0.4, 0.7])}, {0: np.zeros(2)})
        assert exact_variance(UniformPolicy(), ctx, Q2) == 0.0

    @pytest.mark.parametrize("n, seed", [(3, 0), (4, 1), (5, 2)])
    def test_moment_identity(self, n, seed):
        q, ctx, policy = random_instance(n, seed)
        mean, second = estimator_moments(policy, ctx, q)
        centered = VarianceContext(mean, ctx.theta_hat, ctx.zeta_hat, ctx.lambda_hat)
        v = exact_variance(policy, centered, q)
        assert v >= 0
        assert v == pytest.approx(second - mean ** 2, abs=1e-9)

    def test_cap(self):
        q, ctx, policy = random_instance(6, 0)
        with pytest.raises(EnumerationCapError):
            exact_variance(policy, ctx, q)

    def test_support_violation(self):
        theta = np.array([1.0])
        ctx = VarianceContext(0.5, theta, {0: np.array([1.0, 1.0])}, {0: np.array([1.0, -1.0])})
        with pytest.raises(SupportViolationError):
            exact_variance(P1, ctx, Q2)


class TestGradients:
    @pytest.mark.parametrize("n, seed", [(3, 3), (4, 4)])
    def test_exact_gradient_matches_fd(self, n, seed):
        q, ctx, policy = random_instance(n, seed, hidden=(4,))
        fd = fd_gradient(policy, ctx, q)
        np.testing.assert_allclose(exact_variance_gradient(policy, ctx, q), fd,
                                   atol=1e-7 * np.abs(fd).max())

    def test_approx_unbiased_on_average(self):
        q, ctx, policy = random_instance(3, 5, M=2_000, hidden=(4,))
        exact = exact_variance_gradient(policy, ctx, q)
        rng = np.random.default_rng(0)
        mean = np.mean([approx_variance_gradient(policy, ctx, q, rng) for _ in range(20)], axis=0)
        assert np.linalg.norm(mean - exact) / np.linalg.norm(exact) < 0.05

    def test_expected_clicks_option_agrees(self):
        q, ctx, policy = random_instance(3, 6, M=20_000, hidden=(4,))
        exact = exact_variance_gradient(policy, ctx, q)
        est = approx_variance_gradient(policy, ctx, q, np.random.default_rng(1), clicks="expected")
        assert est @ exact / np.linalg.norm(est) / np.linalg.norm(exact) > 0.99

    def test_zero_variance_stationary(self):
        # one tanh unit with a large output weight: doc 0 is ranked first with prob 1 - e^-40
        net = ScoreNetwork(2, (1,), layers=[(np.array([[1.0], [0.0]]), np.zeros(1)),
                                            (np.array([[40.0]]), np.zeros(1))])
        policy = MixturePolicy(ScoreNetworkPolicy(net), 0.0)
        q = Query(0, np.array([[30.0, 0.0], [0.0, 0.0]]), np.zeros(2))
        ctx = two_doc_ctx(M=10_000)
        assert exact_variance(policy, ctx, q) < 1e-12
        spread = MixturePolicy(ScoreNetworkPolicy(ScoreNetwork(2, (1,), layers=[
            (np.array([[0.01], [0.0]]), np.zeros(1)), (np.array([[1.0]]), np.zeros(1))])), 0.0)
        rng = np.random.default_rng(0)
        g_opt = approx_variance_gradient(policy, ctx, q, rng)
        g_ref = approx_variance_gradient(spread, ctx, q, rng)
        assert np.linalg.norm(g_opt) < 1e-2 * np.linalg.norm(g_ref)

    def test_needs_network_policy(self):
        with pytest.raises(InvalidInputError):
            approx_variance_gradient(UniformPolicy(), two_doc_ctx(), Q2, np.random.default_rng(0))


class TestSampling:
    def test_rankings_are_permutations(self, rng):
        r, p, q = sample_rankings(rng.standard_normal(5), 0.2, 200, 5, rng)
        assert np.all(np.sort(r, axis=1) == np.arange(5))
        assert q.min() >= 0 and np.allclose(q.sum(axis=2), 1.0)

    def test_mc_rho_close_to_dp(self, rng):
        q, ctx, policy = random_instance(5, 7)
        exact = policy.rank_marginals(q, 5, "dp") @ ctx.theta_hat
        np.testing.assert_allclose(mc_rho(policy, q, ctx.theta_hat, 40_000, rng), exact, atol=0.01)


class TestTraining:
    def test_descent_step(self):
        q, ctx, policy = random_instance(4, 8, hidden=(4,))
        net = policy.base.network
        x0 = net.get_flat()
        before = exact_variance(policy, ctx, q)
        g = exact_variance_gradient(policy, ctx, q)
        for lr in (1e-3, 1e-4):
            net.set_flat(x0 - lr * g)
            assert exact_variance(policy, ctx, q) <= before
        net.set_flat(x0)

    def test_identical_rankers_noop(self):
        ctx = VarianceContext(0.0, THETA2, {0: np.array([0.5, 0.5])}, {0: np.zeros(2)})
        policy, trace = train_logging_policy([Q2], ctx, OptimizerConfig(steps=20), np.random.default_rng(0))
        assert exact_variance(policy, ctx, Q2) == 0.0
        assert max(trace.variance) == 0.0

    def test_reduces_two_doc_variance(self):
        ctx = two_doc_ctx()
        policy, trace = train_logging_policy([Q2], ctx, OptimizerConfig(steps=300),
                                             np.random.default_rng(0))
        assert exact_variance(policy, ctx, Q2) < exact_variance(UniformPolicy(), ctx, Q2)
        buf = io.StringIO()
        trace.write_csv(buf)
        assert buf.getvalue().startswith("step,estimated_variance,gradient_norm\n")
        assert len(buf.getvalue().splitlines()) == 301

    def test_returned_policy_has_support(self):
        ctx = two_doc_ctx()
        policy, _ = train_logging_policy([Q2], ctx, OptimizerConfig(steps=50), np.random.default_rng(2))
        model = ClickModel(THETA2, {0: [1.0, 0.3]})
        assert check_support(policy, P1, P2, QueryDistribution.single(Q2), model) == []

    def test_candidate_cap(self):
        q = Query.bare(0, 30)
        ctx = VarianceContext(0.0, [1.0], {0: np.zeros(30)}, {0: np.zeros(30)})
        with pytest.raises(InvalidInputError):
            train_logging_policy([q], ctx, OptimizerConfig(steps=1), np.random.default_rng(0))

    def test_schedule_validated(self):
        with pytest.raises(InvalidInputError):
            OptimizerConfig(update_schedule=(10, 5))


def _two_doc_log(n, rng):
    log = InteractionLog()
    for _ in range(n):
        r = tuple(rng.permutation(2))
        c = rng.random(2) < THETA2 * np.array([1.0, 0.0])[list(r)]
        log.append(InteractionRecord(0, r, tuple(c.astype(int))))
    return log


class TestOptimize:
    def test_deterministic(self):
        log = _two_doc_log(500, np.random.default_rng(0))
        cfg = OptimizerConfig(steps=30)
        a, _ = optimize_logging_policy(log, {0: Q2}, P1, P2, cfg, np.random.default_rng(5))
        b, _ = optimize_logging_policy(log, {0: Q2}, P1, P2, cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a.base.network.get_flat(), b.base.network.get_flat())
        assert a.epsilon == 0.1

    def test_empty_log(self):
        with pytest.raises(InvalidInputError):
            optimize_logging_policy(InteractionLog(), {0: Q2}, P1, P2, OptimizerConfig(),
                                    np.random.default_rng(0))
