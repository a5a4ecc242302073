"""Domain types and ground-truth CTR computations under the position-based model.

Documents are identified by their position in the query's document arrays, so
a query with ``n`` candidates has doc ids ``0 .. n-1``.  Rankings are plain
tuples of doc ids.  Truncation to the display length is carried by the click
model: ``theta`` has one entry per displayable rank and every rank past its end
has examination probability zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError

ENUMERATION_CAP = 6
RHO_ZERO = 1e-12


@dataclass(frozen=True, eq=False)
class Query:
    qid: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2:
            raise InvalidInputError("features must be a 2-d array (docs x dim)")
        if len(features) == 0:
            raise InvalidInputError(f"query {self.qid} has no candidate documents")
        if labels.shape != (len(features),):
            raise InvalidInputError(f"query {self.qid}: one label per document required")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def bare(cls, qid: int, n_docs: int, labels=None) -> "Query":
        """A query whose documents carry one-hot features (handy for fixtures)."""
        if labels is None:
            labels = np.zeros(n_docs, dtype=int)
        return cls(qid, np.eye(n_docs), labels)

    @property
    def n_docs(self) -> int:
        return len(self.labels)

    @property
    def candidate_docs(self) -> tuple:
        return tuple(range(self.n_docs))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def check_ranking(ranking: Sequence[int], query: Query) -> tuple:
    ranking = tuple(int(d) for d in ranking)
    if len(set(ranking)) != len(ranking):
        raise InvalidInputError(f"duplicate documents in ranking {ranking}")
    for d in ranking:
        if not 0 <= d < query.n_docs:
            raise InvalidInputError(f"unknown doc id {d} for query {query.qid}")
    return ranking


@dataclass(frozen=True, eq=False)
class ClickModel:
    """Position bias per rank plus conditional click probability per (query, doc)."""

    theta: np.ndarray
    zeta: Mapping[int, np.ndarray]
    clamped: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or len(theta) == 0:
            raise InvalidInputError("theta needs at least one displayable rank")
        if np.any(theta < 0) or np.any(theta > 1):
            raise InvalidInputError("theta entries must lie in [0, 1]")
        zeta = {int(q): np.asarray(z, dtype=float) for q, z in self.zeta.items()}
        for q, z in zeta.items():
            if np.any(z < 0) or np.any(z > 1):
                raise InvalidInputError(f"zeta for query {q} outside [0, 1]")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "zeta", zeta)

    @property
    def display_length(self) -> int:
        return len(self.theta)

    def theta_for(self, length: int) -> np.ndarray:
        """theta padded with zeros (or cut) to ``length`` ranks."""
        out = np.zeros(length)
        m = min(length, len(self.theta))
        out[:m] = self.theta[:m]
        return out

    def zeta_for(self, query: Query) -> np.ndarray:
        try:
            z = self.zeta[query.qid]
        except KeyError:
            raise InvalidInputError(f"click model has no relevances for query {query.qid}") from None
        if len(z) != query.n_docs:
            raise InvalidInputError(f"zeta for query {query.qid} has wrong length")
        return z

    def click_probs(self, ranking: Sequence[int], query: Query) -> np.ndarray:
        ranking = check_ranking(ranking, query)
        return self.theta_for(len(ranking)) * self.zeta_for(query)[list(ranking)]


@dataclass(frozen=True, eq=False)
class QueryDistribution:
    queries: Sequence[Query]
    weights: np.ndarray = None

    def __post_init__(self):
        queries = tuple(self.queries)
        if not queries:
            raise InvalidInputError("query distribution is empty")
        if self.weights is None:
            weights = np.full(len(queries), 1.0 / len(queries))
        else:
            weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(queries),) or np.any(weights < 0):
            raise InvalidInputError("weights must be nonnegative, one per query")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def single(cls, query: Query) -> "QueryDistribution":
        return cls([query], np.array([1.0]))

    def __iter__(self):
        return iter(zip(self.queries, self.weights))


@dataclass(frozen=True)
class InteractionRecord:
    qid: int
    ranking: tuple
    clicks: tuple

    def __post_init__(self):
        ranking = tuple(int(d) for d in self.ranking)
        clicks = tuple(int(c) for c in self.clicks)
        if len(ranking) != len(clicks):
            raise InvalidInputError("click pattern length must equal ranking length")
        if any(c not in (0, 1) for c in clicks):
            raise InvalidInputError("clicks must be 0 or 1")
        object.__setattr__(self, "ranking", ranking)
        object.__setattr__(self, "clicks", clicks)

    @property
    def clicked_docs(self) -> tuple:
        return tuple(d for d, c in zip(self.ranking, self.clicks) if c)


@dataclass
class InteractionLog:
    records: list = field(default_factory=list)

    def append(self, record: InteractionRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class CTREstimate(NamedTuple):
    mean: float
    stderr: float


def expected_ctr_ranking(ranking: Sequence[int], query: Query, model: ClickModel) -> float:
    return float(model.click_probs(ranking, query).sum())


def _query_ctr(policy, query: Query, model: ClickModel) -> float:
    length = min(model.display_length, query.n_docs)
    marginals = policy.rank_marginals(query, length)
    exposure = marginals @ model.theta_for(length)
    return float(exposure @ model.zeta_for(query))


def expected_ctr_policy(policy, dist: QueryDistribution, model: ClickModel) -> float:
    """Exact expected number of clicks per query under ``policy``.

    Stochastic policies are summed over every ranking they can display and are
    refused above ``ENUMERATION_CAP`` candidates; deterministic and uniform
    policies use their closed-form rank marginals.
    """
    return float(sum(w * _query_ctr(policy, q, model) for q, w in dist))


def estimate_ctr_policy(policy, dist: QueryDistribution, model: ClickModel,
                        samples: int, rng: np.random.Generator) -> CTREstimate:
    """Monte-Carlo expected CTR: sample a query, a ranking, and score the ranking."""
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    idx = rng.choice(len(dist.queries), size=samples, p=dist.weights)
    values = np.empty(samples)
    for i, qi in enumerate(idx):
        query = dist.queries[qi]
        ranking = policy.sample_ranking(query, model.display_length, rng)
        values[i] = expected_ctr_ranking(ranking, query, model)
    stderr = float(values.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return CTREstimate(float(values.mean()), stderr)


def delta(policy1, policy2, dist: QueryDistribution, model: ClickModel) -> float:
    return expected_ctr_policy(policy1, dist, model) - expected_ctr_policy(policy2, dist, model)


def delta_bin(value: float) -> int:
    if value > 0:
        return 1
    if value < 0:
        return -1
    return 0
