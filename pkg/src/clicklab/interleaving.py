"""Team-Draft, Probabilistic and Optimized interleaving of two deterministic rankings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .core import ENUMERATION_CAP
from .errors import EnumerationCapError, InfeasiblePlanError, InvalidInputError
from .policies import draw_index


def _same_candidates(r1, r2):
    r1, r2 = tuple(int(d) for d in r1), tuple(int(d) for d in r2)
    if len(set(r1)) != len(r1) or set(r1) != set(r2) or len(r1) != len(r2):
        raise InvalidInputError("interleaved rankings must order the same candidate set")
    return r1, r2


# ---------------------------------------------------------------- team draft

@dataclass(frozen=True)
class TDIResult:
    ranking: tuple
    assignments: tuple


def tdi_rounds(n_docs: int) -> int:
    return (n_docs + 1) // 2


def tdi_from_flips(r1, r2, flips: Sequence[int], k: int = None) -> TDIResult:
    """Team draft with one coin per round; flip 0 lets ranker 1 pick first."""
    r1, r2 = _same_candidates(r1, r2)
    n = len(r1)
    placed, ranking, owners = set(), [], []
    for flip in flips:
        for team in ((1, 2) if flip == 0 else (2, 1)):
            if len(ranking) == n:
                break
            src = r1 if team == 1 else r2
            d = next(d for d in src if d not in placed)
            placed.add(d)
            ranking.append(d)
            owners.append(team)
    if len(ranking) != n:
        raise InvalidInputError(f"need {tdi_rounds(n)} coin flips, got {len(flips)}")
    k = n if k is None else k
    return TDIResult(tuple(ranking[:k]), tuple(owners[:k]))


def tdi_interleave(r1, r2, rng: np.random.Generator, k: int = None) -> TDIResult:
    r1, r2 = _same_candidates(r1, r2)
    flips = rng.integers(2, size=tdi_rounds(len(r1)))
    return tdi_from_flips(r1, r2, flips, k)


def tdi_outcome(result: TDIResult, clicks: Sequence[int]) -> int:
    if len(clicks) != len(result.ranking):
        raise InvalidInputError("click pattern must match the interleaved ranking")
    score = sum((1 if a == 1 else -1) for a, c in zip(result.assignments, clicks) if c)
    return (score > 0) - (score < 0)


# ------------------------------------------------------------- probabilistic

@dataclass(frozen=True)
class PIConfig:
    tau: float = 4.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")


def _rank_weights(ranking: tuple, size: int, tau: float) -> np.ndarray:
    w = np.zeros(size)
    w[list(ranking)] = np.arange(1, len(ranking) + 1, dtype=float) ** (-tau)
    return w


def _pi_tables(r1, r2, config: PIConfig):
    r1, r2 = _same_candidates(r1, r2)
    size = max(r1) + 1
    avail = np.zeros(size, dtype=bool)
    avail[list(r1)] = True
    return r1, _rank_weights(r1, size, config.tau), _rank_weights(r2, size, config.tau), avail


def pi_interleave(r1, r2, config: PIConfig, rng: np.random.Generator, k: int = None) -> tuple:
    """At each rank pick a ranker uniformly and draw from its rank**-tau softmax."""
    r1, w1, w2, avail = _pi_tables(r1, r2, config)
    k = len(r1) if k is None else min(k, len(r1))
    out = []
    for _ in range(k):
        w = (w1 if rng.integers(2) == 0 else w2) * avail
        d = draw_index(w, rng)
        out.append(d)
        avail[d] = False
    return tuple(out)


def pi_posteriors(displayed, r1, r2, config: PIConfig):
    """Probability of ``displayed`` and, per position, P(that doc was added by ranker 1)."""
    _, w1, w2, avail = _pi_tables(r1, r2, config)
    prob, post = 1.0, []
    for d in displayed:
        if not 0 <= d < len(avail) or not avail[d]:
            return 0.0, np.array(post)
        p1 = w1[d] / w1[avail].sum()
        p2 = w2[d] / w2[avail].sum()
        prob *= 0.5 * (p1 + p2)
        post.append(p1 / (p1 + p2))
        avail[d] = False
    return prob, np.array(post)


def pi_distribution(r1, r2, config: PIConfig, k: int = None) -> list:
    """Exact (ranking, probability, posteriors) for every reachable PI interleaving."""
    r1, r2 = _same_candidates(r1, r2)
    k = len(r1) if k is None else min(k, len(r1))
    out = []
    for perm in itertools.permutations(r1, k):
        prob, post = pi_posteriors(perm, r1, r2, config)
        if prob > 0:
            out.append((perm, prob, post))
    return out


def expected_sign(post: np.ndarray, clicks: np.ndarray) -> np.ndarray:
    """E[sign(sum over clicked positions of +1/-1)] with independent assignments.

    ``post`` and ``clicks`` have shape (..., k); the result has shape (...).
    Position i counts +1 with probability post[..., i] when clicked.
    """
    post = np.asarray(post, dtype=float)
    clicks = np.asarray(clicks, dtype=bool)
    k = post.shape[-1]
    dist = np.zeros(post.shape[:-1] + (2 * k + 1,))
    dist[..., k] = 1.0
    for i in range(k):
        p = post[..., i, None]
        moved = p * np.roll(dist, 1, axis=-1) + (1.0 - p) * np.roll(dist, -1, axis=-1)
        dist = np.where(clicks[..., i, None], moved, dist)
    return dist[..., k + 1:].sum(axis=-1) - dist[..., :k].sum(axis=-1)


def pi_expected_outcome(displayed, clicks, r1, r2, config: PIConfig) -> float:
    displayed = tuple(int(d) for d in displayed)
    if len(clicks) != len(displayed):
        raise InvalidInputError("click pattern must match the displayed ranking")
    prob, post = pi_posteriors(displayed, r1, r2, config)
    if prob <= 0:
        raise InvalidInputError(f"ranking {displayed} cannot be produced by probabilistic interleaving")
    return float(expected_sign(post, np.asarray(clicks)))


# ----------------------------------------------------------------- optimized

@dataclass(frozen=True, eq=False)
class OIPlan:
    allowed: tuple
    probs: np.ndarray
    credits: dict
    exposure_credit: np.ndarray

    def sample(self, rng: np.random.Generator) -> tuple:
        return self.allowed[draw_index(self.probs, rng)]


def _max_entropy_zero_mean(s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Max-entropy distribution p with sum(p * s) = 0, i.e. p ~ exp(beta * s)."""
    n = len(s)
    if np.all(np.abs(s) <= tol) or abs(s.mean()) <= tol * max(1.0, np.abs(s).max()):
        return np.full(n, 1.0 / n)
    if s.min() > tol or s.max() < -tol:
        raise InfeasiblePlanError("no distribution over allowed interleavings has zero expected credit")
    if s.min() >= -tol or s.max() <= tol:
        zero = np.abs(s) <= tol
        return zero / zero.sum()

    def mean_at(beta):
        logw = beta * s
        return float(np.exp(logw - logsumexp(logw)) @ s)

    lo, hi = -1.0, 1.0
    while mean_at(lo) > 0:
        lo *= 2
    while mean_at(hi) < 0:
        hi *= 2
    beta = brentq(mean_at, lo, hi, xtol=1e-14, rtol=1e-15)
    logw = beta * s
    return np.exp(logw - logsumexp(logw))


def oi_plan(r1, r2, theta=None) -> OIPlan:
    """Allowed interleavings, linear rank-difference credits, max-entropy zero-credit plan.

    ``theta`` is the examination vector the zero-credit constraint is taken
    under (default 1/rank); ranks past its end count as unexamined.
    """
    r1, r2 = _same_candidates(r1, r2)
    n = len(r1)
    if n > ENUMERATION_CAP:
        raise EnumerationCapError(f"optimized interleaving enumerates at most {ENUMERATION_CAP} docs")
    rank1 = {d: i for i, d in enumerate(r1)}
    rank2 = {d: i for i, d in enumerate(r2)}
    credits = {d: float(rank2[d] - rank1[d]) for d in r1}
    agreed = [(a, b) for a, b in itertools.permutations(r1, 2)
              if rank1[a] < rank1[b] and rank2[a] < rank2[b]]
    allowed = []
    for perm in itertools.permutations(r1):
        pos = {d: i for i, d in enumerate(perm)}
        if all(pos[a] < pos[b] for a, b in agreed):
            allowed.append(perm)
    if theta is None:
        theta = 1.0 / np.arange(1, n + 1)
    th = np.zeros(n)
    m = min(n, len(theta))
    th[:m] = np.asarray(theta, dtype=float)[:m]
    cred = np.array([[credits[d] for d in perm] for perm in allowed])
    s = cred @ th
    probs = _max_entropy_zero_mean(s)
    return OIPlan(tuple(allowed), probs, credits, s)


def oi_outcome(plan: OIPlan, displayed, clicks) -> float:
    displayed = tuple(int(d) for d in displayed)
    if len(clicks) != len(displayed):
        raise InvalidInputError("click pattern must match the displayed ranking")
    if not any(a[: len(displayed)] == displayed for a in plan.allowed):
        raise InvalidInputError(f"ranking {displayed} is not an allowed interleaving")
    return float(sum(plan.credits[d] for d, c in zip(displayed, clicks) if c))
