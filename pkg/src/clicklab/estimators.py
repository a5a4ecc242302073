"""A/B and IPS estimators, propensity/exposure tables, and comparison metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import RHO_ZERO, ClickModel, InteractionRecord, Query, QueryDistribution, delta_bin
from .errors import InvalidInputError, SupportViolationError

MC_EXPOSURE_SAMPLES = 10_000


@dataclass(frozen=True, eq=False)
class ExposureTable:
    """Per-document logging propensity ``rho`` and exposure difference ``lam``."""

    rho: np.ndarray
    lam: np.ndarray
    rho_stderr: Optional[np.ndarray] = None


def _mc_exposure(policy, query: Query, theta: np.ndarray, samples: int, rng):
    length = len(theta)
    draws = np.zeros((samples, query.n_docs))
    for i in range(samples):
        ranking = policy.sample_ranking(query, length, rng)
        draws[i, list(ranking)] = theta[: len(ranking)]
    return draws.mean(axis=0), draws.std(axis=0, ddof=1) / math.sqrt(samples)


def compute_exposure(policy_log, policy1, policy2, query: Query, theta, mode: str = "exact",
                     samples: int = MC_EXPOSURE_SAMPLES, rng: np.random.Generator = None
                     ) -> ExposureTable:
    """rho(d) = E_R~pi0[theta_rank(d|R)] and lam(d) = the same expectation under pi1 minus pi2.

    ``mode`` is ``exact`` (ranking enumeration, capped), ``dp`` (exact, summed over
    placed-sets) or ``monte_carlo`` (sampled, standard error recorded).
    """
    theta = np.asarray(theta, dtype=float)
    length = min(len(theta), query.n_docs)
    theta = theta[:length]
    if mode in ("exact", "dp"):
        rho = policy_log.rank_marginals(query, length, mode) @ theta
        lam = (policy1.rank_marginals(query, length, mode)
               - policy2.rank_marginals(query, length, mode)) @ theta
        return ExposureTable(rho, lam)
    if mode == "monte_carlo":
        if rng is None or samples < 2:
            raise InvalidInputError("monte_carlo exposure needs an rng and >= 2 samples")
        rho, se = _mc_exposure(policy_log, query, theta, samples, rng)
        lam = _mc_exposure(policy1, query, theta, samples, rng)[0] \
            - _mc_exposure(policy2, query, theta, samples, rng)[0]
        return ExposureTable(rho, lam, se)
    raise InvalidInputError(f"unknown exposure mode {mode!r}")


def ab_estimate(record: InteractionRecord, assignment: int, prob_1: float = 0.5) -> float:
    if not 0.0 < prob_1 < 1.0:
        raise InvalidInputError("P(A = 1) must lie strictly between 0 and 1")
    if assignment == 1:
        weight = 1.0 / prob_1
    elif assignment == 2:
        weight = -1.0 / (1.0 - prob_1)
    else:
        raise InvalidInputError("assignment must be 1 or 2")
    return weight * sum(record.clicks)


def ips_estimate(record: InteractionRecord, exposure: ExposureTable) -> float:
    total = 0.0
    for d in record.clicked_docs:
        rho = exposure.rho[d]
        if rho <= RHO_ZERO:
            raise SupportViolationError(f"click on doc {d} whose logging propensity is 0")
        total += exposure.lam[d] / rho
    return total


class SupportViolation(NamedTuple):
    qid: int
    doc: int
    zeta: float
    lam: float
    rho: float


def check_support(policy_log, policy1, policy2, dist: QueryDistribution, model: ClickModel,
                  mode: str = "exact") -> list:
    """Every (query, doc) with nonzero zeta * lambda but zero logging propensity."""
    out = []
    for q, _ in dist:
        table = compute_exposure(policy_log, policy1, policy2, q, model.theta, mode)
        zeta = model.zeta_for(q)
        for d in range(q.n_docs):
            if zeta[d] * table.lam[d] != 0.0 and table.rho[d] <= RHO_ZERO:
                out.append(SupportViolation(q.qid, d, float(zeta[d]), float(table.lam[d]),
                                            float(table.rho[d])))
    return out


@dataclass
class EstimateSeries:
    """Running per-interaction estimates.

    Keeps plain sums so independently accumulated series merge exactly.  When
    ``truth`` is given, squared deviations from it are accumulated directly.
    """

    truth: Optional[float] = None
    keep_values: bool = False
    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0
    sq_dev: float = 0.0
    values: list = field(default_factory=list)

    def extend(self, xs) -> None:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        self.count += len(xs)
        self.total += float(xs.sum())
        self.total_sq += float((xs * xs).sum())
        if self.truth is not None:
            self.sq_dev += float(((xs - self.truth) ** 2).sum())
        if self.keep_values:
            self.values.extend(xs.tolist())

    def add(self, x: float) -> None:
        self.extend([x])

    def merge(self, other: "EstimateSeries") -> "EstimateSeries":
        if self.truth != other.truth:
            raise InvalidInputError("cannot merge series evaluated against different truths")
        out = EstimateSeries(self.truth, self.keep_values and other.keep_values,
                             self.count + other.count, self.total + other.total,
                             self.total_sq + other.total_sq, self.sq_dev + other.sq_dev)
        if out.keep_values:
            out.values = self.values + other.values
        return out

    @property
    def mean(self) -> float:
        if self.count == 0:
            raise InvalidInputError("empty estimate series")
        return self.total / self.count

    def mse(self, true_delta: float) -> float:
        """(1/N) sum_i (true_delta - x_i)^2."""
        if self.count == 0:
            raise InvalidInputError("empty estimate series")
        if self.truth is not None and true_delta == self.truth:
            return self.sq_dev / self.count
        m = self.total / self.count
        return max(true_delta * true_delta - 2.0 * true_delta * m + self.total_sq / self.count, 0.0)


class Metrics(NamedTuple):
    binary_error: int
    absolute_error: float
    mse: float


def metrics(series: EstimateSeries, true_delta: float) -> Metrics:
    est = series.mean
    return Metrics(int(delta_bin(est) != delta_bin(true_delta)), abs(true_delta - est),
                   series.mse(true_delta))
