"""Logging-policy optimization: minimize the variance of the IPS estimate of Delta.

All parameter gradients are expressed as a coefficient vector over a query's
documents multiplied by the network Jacobian d score_j / d params.  For a
Plackett-Luce step with unplaced-doc softmax ``p`` and mixture placement
``q = (1 - eps) p + eps u``:

    d q_d = (1 - eps) p_d (e_d - p) . J
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .clicks import all_patterns
from .core import RHO_ZERO, InteractionLog, Query
from .em import EMConfig, em_fit
from .errors import EnumerationCapError, InvalidInputError, SupportViolationError
from .estimators import compute_exposure
from .policies import (DEFAULT_EPSILON, MixturePolicy, Policy, ScoreNetworkPolicy, UniformPolicy,
                       softmax_unplaced)

log = logging.getLogger(__name__)

EXACT_VARIANCE_DOCS = 5
RHO_DP_STATES = 65_536


@dataclass(frozen=True, eq=False)
class VarianceContext:
    delta_hat: float
    theta_hat: np.ndarray
    zeta_hat: Mapping[int, np.ndarray]
    lambda_hat: Mapping[int, np.ndarray]
    M: int = 32

    def __post_init__(self):
        if self.M < 1:
            raise InvalidInputError("M must be >= 1")
        theta = np.asarray(self.theta_hat, dtype=float)
        if np.any(theta < 0) or np.any(theta > 1):
            raise InvalidInputError("theta_hat entries must lie in [0, 1]")
        zeta = {int(q): np.asarray(z, dtype=float) for q, z in self.zeta_hat.items()}
        if any(np.any(z < 0) or np.any(z > 1) for z in zeta.values()):
            raise InvalidInputError("zeta_hat entries must lie in [0, 1]")
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "zeta_hat", zeta)
        object.__setattr__(self, "lambda_hat",
                           {int(q): np.asarray(v, dtype=float) for q, v in self.lambda_hat.items()})

    def for_query(self, query: Query):
        try:
            zeta, lam = self.zeta_hat[query.qid], self.lambda_hat[query.qid]
        except KeyError:
            raise InvalidInputError(f"variance context has no entry for query {query.qid}") from None
        length = min(len(self.theta_hat), query.n_docs)
        return self.theta_hat[:length], zeta, lam


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 2000
    learning_rate: float = 1e-2
    epsilon: float = DEFAULT_EPSILON
    update_schedule: tuple = (1_000, 10_000, 100_000, 1_000_000)
    M: int = 32
    rho_samples: int = 1_000
    rho_refresh: int = 100
    max_candidates: int = 25
    hidden: tuple = (32, 32)
    clicks: str = "sampled"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidInputError("epsilon must lie in [0, 1]")
        sched = tuple(int(s) for s in self.update_schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise InvalidInputError("update_schedule must be strictly increasing")
        object.__setattr__(self, "update_schedule", sched)
        if self.steps < 0 or self.M < 1:
            raise InvalidInputError("steps must be >= 0 and M >= 1")


def _split(policy: Policy):
    """(ScoreNetworkPolicy, epsilon) for a network policy, optionally mixed."""
    eps = 0.0
    if isinstance(policy, MixturePolicy):
        eps, policy = policy.epsilon, policy.base
    if not isinstance(policy, ScoreNetworkPolicy):
        raise InvalidInputError("variance gradients need a score-network policy (optionally mixed)")
    return policy, eps


def _ips_terms(rho: np.ndarray, lam: np.ndarray, clickable: np.ndarray) -> np.ndarray:
    """lam / rho per doc; docs that can never be clicked or have lam = 0 contribute 0."""
    bad = clickable & (lam != 0) & (rho <= RHO_ZERO)
    if np.any(bad):
        raise SupportViolationError(f"docs {np.flatnonzero(bad).tolist()} are clickable with "
                                    "nonzero exposure difference but zero logging propensity")
    return np.divide(lam, rho, out=np.zeros_like(lam), where=rho > RHO_ZERO)


def exact_variance(policy_log: Policy, ctx: VarianceContext, query: Query) -> float:
    """sum_c P(c | q) (Delta - sum_{clicked} lam/rho)^2, enumerating rankings and clicks."""
    return _exact(policy_log, ctx, query)[0]


def _exact(policy_log, ctx, query, moments=False):
    if query.n_docs > EXACT_VARIANCE_DOCS:
        raise EnumerationCapError(f"exact variance enumerates at most {EXACT_VARIANCE_DOCS} docs")
    theta, zeta, lam = ctx.for_query(query)
    length = len(theta)
    rho = policy_log.rank_marginals(query, length) @ theta
    terms = _ips_terms(rho, lam, zeta > 0)
    patterns = all_patterns(length)
    total = first = second = 0.0
    for ranking, prob in policy_log.enumerate_rankings(query, length):
        idx = list(ranking)
        pc = theta * zeta[idx]
        p_pat = np.prod(np.where(patterns == 1, pc, 1.0 - pc), axis=1)
        x = patterns @ terms[idx]
        total += prob * float(p_pat @ (ctx.delta_hat - x) ** 2)
        first += prob * float(p_pat @ x)
        second += prob * float(p_pat @ x ** 2)
    if moments:
        return total, first, second
    return total, rho


def estimator_moments(policy_log: Policy, ctx: VarianceContext, query: Query):
    """(E[x], E[x^2]) of the per-interaction IPS estimate under ``policy_log``."""
    _, first, second = _exact(policy_log, ctx, query, moments=True)
    return first, second


def _step_coefficients(p: np.ndarray, q: np.ndarray, chosen: np.ndarray, eps: float) -> np.ndarray:
    """Coefficient of d log q(chosen) w.r.t. scores; ``p``, ``q`` shaped (..., n)."""
    n = p.shape[-1]
    onehot = np.eye(n)[chosen]
    p_c = np.take_along_axis(p, chosen[..., None], axis=-1)
    q_c = np.take_along_axis(q, chosen[..., None], axis=-1)
    return (1.0 - eps) * p_c / q_c * (onehot - p)


def exact_variance_gradient(policy_log: Policy, ctx: VarianceContext, query: Query) -> np.ndarray:
    """Analytic gradient of ``exact_variance`` w.r.t. the network's flat parameters."""
    policy, eps = _split(policy_log)
    if query.n_docs > EXACT_VARIANCE_DOCS:
        raise EnumerationCapError(f"exact variance enumerates at most {EXACT_VARIANCE_DOCS} docs")
    theta, zeta, lam = ctx.for_query(query)
    length, n = len(theta), query.n_docs
    scores, jac = policy.network.jacobian(query.features)
    rho = policy_log.rank_marginals(query, length) @ theta
    terms = _ips_terms(rho, lam, zeta > 0)
    patterns = all_patterns(length)

    rankings, probs, dlogs = [], [], []
    for ranking, prob in policy_log.enumerate_rankings(query, length):
        placed = np.zeros(n, dtype=bool)
        coef = np.zeros(n)
        for d in ranking:
            p = softmax_unplaced(scores, placed)
            free = ~placed
            q = (1.0 - eps) * p + eps * free / free.sum()
            coef += _step_coefficients(p, q, np.array(d), eps)
            placed[d] = True
        rankings.append(list(ranking))
        probs.append(prob)
        dlogs.append(coef)

    # d rho_d = sum_R pi(R) theta_{rank of d in R} d log pi(R)
    drho = np.zeros((n, n))
    for idx, prob, coef in zip(rankings, probs, dlogs):
        drho[idx] += prob * theta[:, None] * coef[None, :]

    grad = np.zeros(n)
    for idx, prob, coef in zip(rankings, probs, dlogs):
        pc = theta * zeta[idx]
        p_pat = np.prod(np.where(patterns == 1, pc, 1.0 - pc), axis=1)
        err = ctx.delta_hat - patterns @ terms[idx]
        grad += prob * float(p_pat @ err ** 2) * coef
        # d(err^2) = 2 err sum_{clicked} lam/rho^2 d rho
        w = np.zeros(n)
        inv = np.divide(lam, rho ** 2, out=np.zeros(n), where=rho > RHO_ZERO)
        w[idx] = (2.0 * (p_pat * err) @ patterns) * inv[idx]
        grad += prob * (w @ drho)
    return grad @ jac


def sample_rankings(scores: np.ndarray, eps: float, count: int, length: int,
                    rng: np.random.Generator):
    """Draw ``count`` rankings from the eps-mixed Plackett-Luce policy.

    Returns the rankings (count, length) plus the per-step softmax ``p`` and
    mixture ``q`` distributions, each shaped (count, length, n).
    """
    n = len(scores)
    placed = np.zeros((count, n), dtype=bool)
    rankings = np.empty((count, length), dtype=int)
    ps = np.empty((count, length, n))
    qs = np.empty((count, length, n))
    rows = np.arange(count)
    for k in range(length):
        p = softmax_unplaced(np.broadcast_to(scores, (count, n)), placed)
        free = ~placed
        q = (1.0 - eps) * p + eps * free / free.sum(axis=1, keepdims=True)
        cdf = np.cumsum(q, axis=1)
        u = rng.random(count) * cdf[:, -1]
        d = np.minimum((cdf <= u[:, None]).sum(axis=1), n - 1)
        # never land on a placed doc through rounding at the top of the cdf
        d = np.where(placed[rows, d], np.argmax(np.where(placed, -1.0, q), axis=1), d)
        rankings[:, k] = d
        ps[:, k], qs[:, k] = p, q
        placed[rows, d] = True
    return rankings, ps, qs


@dataclass
class GradientEstimate:
    gradient: np.ndarray
    variance: float  # Monte-Carlo estimate of the objective from the same samples


def approx_variance_gradient(policy_log: Policy, ctx: VarianceContext, query: Query,
                             rng: np.random.Generator, rho: Optional[np.ndarray] = None,
                             with_variance: bool = False, clicks: str = "sampled",
                             baseline: bool = False, _parts: dict = None):
    """Monte-Carlo variance gradient from M sampled rankings and click patterns.

    Per sample: freq-grad = err^2 * sum_x d log pi0(R_x | R_{1:x-1}) and
    error-grad = 2 err * sum_{clicked} lam/rho^2 * rho-grad, where rho-grad is
    itself averaged over the same M rankings.  ``rho`` defaults to the exact
    propensities of ``policy_log``.

    Two optional variance reductions leave the expectation unchanged:
    ``clicks="expected"`` replaces each sampled click pattern by its exact
    conditional expectation given the ranking, and ``baseline=True`` subtracts
    a leave-one-out mean from the freq-grad weights.
    """
    if clicks not in ("sampled", "expected"):
        raise InvalidInputError(f"unknown click mode {clicks!r}")
    policy, eps = _split(policy_log)
    theta, zeta, lam = ctx.for_query(query)
    length, n, m = len(theta), query.n_docs, ctx.M
    scores, jac = policy.network.jacobian(query.features)
    if rho is None:
        rho = policy_log.rank_marginals(query, length, "dp") @ theta
    terms = _ips_terms(np.asarray(rho, dtype=float), lam, zeta > 0)

    rankings, ps, qs = sample_rankings(scores, eps, m, length, rng)
    pc = theta * zeta[rankings]
    t = terms[rankings]
    if clicks == "sampled":
        c = (rng.random((m, length)) < pc).astype(float)
        err = ctx.delta_hat - (c * t).sum(axis=1)
        sq_err = err ** 2
        click_err = 2.0 * err[:, None] * c                     # err * c_k per rank
    else:
        mu = ctx.delta_hat - (pc * t).sum(axis=1)
        sq_err = mu ** 2 + (pc * (1.0 - pc) * t ** 2).sum(axis=1)
        click_err = 2.0 * pc * (mu[:, None] - (1.0 - pc) * t)  # E[err * c_k | R]

    steps = _step_coefficients(ps, qs, rankings, eps)            # (m, L, n)
    weight = sq_err
    if baseline and m > 1:
        weight = sq_err - (sq_err.sum() - sq_err) / (m - 1)
    freq = weight @ steps.sum(axis=1) / m

    # rho-grad[d] = mean_m sum_k theta_k (d q_k(d) + q_k(d) * sum_{x<k} d log q_x)
    before = np.cumsum(steps, axis=1) - steps
    wp = (1.0 - eps) * theta[None, :, None] * ps                 # (m, L, n)
    rho_grad = np.diag(wp.sum(axis=(0, 1))) - np.einsum("mkd,mkj->dj", wp, ps)
    rho_grad += np.einsum("k,mkd,mkj->dj", theta, qs, before)
    rho_grad /= m

    inv = np.divide(lam, np.asarray(rho) ** 2, out=np.zeros(n), where=np.asarray(rho) > RHO_ZERO)
    weights = np.zeros((m, n))
    np.add.at(weights, (np.repeat(np.arange(m), length), rankings.ravel()),
              (click_err * inv[rankings]).ravel())
    error = weights.sum(axis=0) / m @ rho_grad

    grad = (freq + error) @ jac
    if with_variance:
        return GradientEstimate(grad, float(np.mean(sq_err)))
    if _parts is not None:
        _parts.update(freq=freq @ jac, error=error @ jac, click_weights=weights.sum(axis=0) / m,
                      rho_grad=rho_grad, jac=jac)
    return grad


def mc_rho(policy_log: Policy, query: Query, theta: np.ndarray, samples: int,
           rng: np.random.Generator) -> np.ndarray:
    """Sampled propensities, floored at the smallest value the eps-mixture allows."""
    policy, eps = _split(policy_log)
    theta = np.asarray(theta, dtype=float)
    rankings, _, _ = sample_rankings(policy.network.scores(query.features), eps, samples,
                                     len(theta), rng)
    rho = np.zeros(query.n_docs)
    np.add.at(rho, rankings.ravel(), np.tile(theta, samples))
    rho /= samples
    # a doc missing from the sample is not a structural zero
    floor = eps / query.n_docs * theta.min() if eps > 0 else 0.0
    return np.maximum(rho, floor)


def _rho_states(n: int, length: int) -> int:
    return sum(math.comb(n, j) for j in range(length))


@dataclass
class TrainingTrace:
    steps: list = field(default_factory=list)
    variance: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)

    def write_csv(self, stream) -> None:
        stream.write("step,estimated_variance,gradient_norm\n")
        for s, v, g in zip(self.steps, self.variance, self.grad_norm):
            stream.write(f"{s},{v:.6g},{g:.6g}\n")


def train_logging_policy(queries: Sequence[Query], ctx: VarianceContext, config: OptimizerConfig,
                         rng: np.random.Generator, weights=None,
                         init: Optional[ScoreNetworkPolicy] = None):
    """Plain gradient descent on the expected per-query variance.

    Each step samples one query (by ``weights``, default uniform), estimates
    the variance gradient from ``ctx.M`` rankings and applies one update.
    Returns the trained eps-mixture and a ``TrainingTrace``.
    """
    queries = list(queries)
    if not queries:
        raise InvalidInputError("no queries to train on")
    for q in queries:
        if q.n_docs > config.max_candidates:
            raise InvalidInputError(f"query {q.qid} has {q.n_docs} docs; the cap is {config.max_candidates}")
    dims = {q.feature_dim for q in queries}
    if len(dims) != 1:
        raise InvalidInputError("queries disagree on feature dimension")
    base = init or ScoreNetworkPolicy.init(dims.pop(), rng, config.hidden)
    policy = MixturePolicy(base, config.epsilon)
    net = base.network
    params = net.get_flat()
    probs = None if weights is None else np.asarray(weights, dtype=float)
    trace = TrainingTrace()
    rho_cache = {}

    for step in range(config.steps):
        query = queries[rng.choice(len(queries), p=probs)]
        length = min(len(ctx.theta_hat), query.n_docs)
        if _rho_states(query.n_docs, length) <= RHO_DP_STATES:
            rho = policy.rank_marginals(query, length, "dp") @ ctx.theta_hat[:length]
        else:
            cached = rho_cache.get(query.qid)
            if cached is None or step - cached[0] >= config.rho_refresh:
                cached = (step, mc_rho(policy, query, ctx.theta_hat[:length], config.rho_samples, rng))
                rho_cache[query.qid] = cached
            rho = cached[1]
        est = approx_variance_gradient(policy, ctx, query, rng, rho=rho, with_variance=True,
                                       clicks=config.clicks)
        params = params - config.learning_rate * est.gradient
        net.set_flat(params)
        trace.steps.append(step)
        trace.variance.append(est.variance)
        trace.grad_norm.append(float(np.linalg.norm(est.gradient)))
    return policy, trace


def ips_delta_from_log(interactions: InteractionLog, queries: Mapping[int, Query], policy1: Policy,
                       policy2: Policy, logging_policy: Policy, theta: np.ndarray,
                       mode: str = "dp") -> float:
    """Mean per-interaction IPS estimate over ``interactions`` under ``theta``."""
    tables, total, count = {}, 0.0, 0
    for rec in interactions:
        if rec.qid not in tables:
            q = queries[rec.qid]
            length = min(len(theta), q.n_docs)
            tables[rec.qid] = compute_exposure(logging_policy, policy1, policy2, q,
                                               theta[:length], mode)
        t = tables[rec.qid]
        total += sum(t.lam[d] / t.rho[d] for d in rec.clicked_docs if t.rho[d] > RHO_ZERO)
        count += 1
    if count == 0:
        raise InvalidInputError("empty interaction log")
    return total / count


def optimize_logging_policy(interactions: InteractionLog, queries: Mapping[int, Query],
                            policy1: Policy, policy2: Policy, config: OptimizerConfig,
                            rng: np.random.Generator, logging_policy: Policy = None,
                            em_config: EMConfig = EMConfig()):
    """EM on the log, then lam-hat and Delta-hat under theta-hat, then train a fresh policy.

    ``logging_policy`` is the policy that produced ``interactions`` (default
    uniform); it supplies the propensities for Delta-hat.
    """
    if len(interactions) == 0:
        raise InvalidInputError("interaction log is empty")
    logging_policy = logging_policy or UniformPolicy()
    fit = em_fit(interactions, em_config)
    theta = np.nan_to_num(fit.theta, nan=0.0).clip(0.0, 1.0)
    counts = {}
    for rec in interactions:
        counts[rec.qid] = counts.get(rec.qid, 0) + 1
    qids = sorted(counts)
    qs = [queries[q] for q in qids]
    lam = {}
    for q in qs:
        length = min(len(theta), q.n_docs)
        lam[q.qid] = compute_exposure(policy1, policy1, policy2, q, theta[:length]).lam
    zeta = {q.qid: np.clip(fit.zeta_for(q), 0.0, 1.0) for q in qs}
    delta_hat = ips_delta_from_log(interactions, queries, policy1, policy2, logging_policy, theta)
    ctx = VarianceContext(delta_hat, theta, zeta, lam, config.M)
    w = np.array([counts[q] for q in qids], dtype=float)
    return train_logging_policy(qs, ctx, config, rng, weights=w / w.sum())
