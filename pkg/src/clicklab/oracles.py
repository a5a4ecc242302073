"""Exact enumeration and closed-form oracles on small single-query instances.

The three-document fixtures use doc ids A=0, B=1, C=2 with ranker 1 showing
[A, B, C], ranker 2 showing [B, C, A] and B never relevant.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .clicks import all_patterns
from .core import RHO_ZERO, ClickModel, Query, delta_bin
from .errors import EnumerationCapError, InvalidInputError, SupportViolationError
from .interleaving import (PIConfig, expected_sign, oi_plan, pi_distribution, tdi_from_flips,
                           tdi_outcome, tdi_rounds)
from .policies import DeterministicPolicy, Policy, UniformPolicy

SMALL_DOCS = 5
METHODS = ("ab", "tdi", "pi", "oi", "ips")
A, B, C = 0, 1, 2


@dataclass(frozen=True, eq=False)
class SmallInstance:
    theta: np.ndarray
    zeta: np.ndarray
    ranking1: tuple
    ranking2: tuple
    qid: int = 0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        zeta = np.asarray(self.zeta, dtype=float)
        n = len(zeta)
        if n > SMALL_DOCS:
            raise EnumerationCapError(f"small instances hold at most {SMALL_DOCS} docs")
        for r in (self.ranking1, self.ranking2):
            if sorted(r) != list(range(n)):
                raise InvalidInputError("rankings must be permutations of the instance's docs")
        if not 1 <= len(theta) <= n:
            raise InvalidInputError("theta needs between 1 and n_docs ranks")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "ranking1", tuple(int(d) for d in self.ranking1))
        object.__setattr__(self, "ranking2", tuple(int(d) for d in self.ranking2))
        self.model  # validates ranges

    @classmethod
    def three_doc(cls, theta, zeta_a: float, zeta_c: float) -> "SmallInstance":
        return cls(theta, (zeta_a, 0.0, zeta_c), (A, B, C), (B, C, A))

    @property
    def k(self) -> int:
        return len(self.theta)

    @property
    def query(self) -> Query:
        return Query.bare(self.qid, len(self.zeta))

    @property
    def model(self) -> ClickModel:
        return ClickModel(self.theta, {self.qid: self.zeta})

    @property
    def policy1(self) -> DeterministicPolicy:
        return DeterministicPolicy({self.qid: self.ranking1})

    @property
    def policy2(self) -> DeterministicPolicy:
        return DeterministicPolicy({self.qid: self.ranking2})

    @property
    def delta(self) -> float:
        k = self.k
        return float(self.theta @ (self.zeta[list(self.ranking1[:k])] - self.zeta[list(self.ranking2[:k])]))


def _patterns(ranking: Sequence[int], inst: SmallInstance):
    """All click patterns on ``ranking`` and their probabilities."""
    pc = inst.theta[: len(ranking)] * inst.zeta[list(ranking)]
    pats = all_patterns(len(ranking))
    return pats, np.prod(np.where(pats == 1, pc, 1.0 - pc), axis=1)


def _exposure(inst: SmallInstance, ranking: Sequence[int]) -> np.ndarray:
    out = np.zeros(len(inst.zeta))
    out[list(ranking[: inst.k])] = inst.theta
    return out


def enum_expected_outcome(method: str, inst: SmallInstance, logging_policy: Policy = None,
                          pi_config: PIConfig = PIConfig()) -> float:
    """Exact expectation of a method's per-interaction estimate.

    Sums over every randomization branch (assignment, coin flips, interleaving,
    logged ranking) and every click pattern on the displayed top ``k``.
    """
    k, r1, r2 = inst.k, inst.ranking1, inst.ranking2
    total = 0.0
    if method == "ab":
        for sign, ranking in ((1.0, r1), (-1.0, r2)):
            pats, probs = _patterns(ranking[:k], inst)
            total += 0.5 * sign * 2.0 * float(probs @ pats.sum(axis=1))
        return total
    if method == "tdi":
        rounds = tdi_rounds(len(r1))
        for flips in itertools.product((0, 1), repeat=rounds):
            res = tdi_from_flips(r1, r2, flips, k)
            pats, probs = _patterns(res.ranking, inst)
            total += sum(p * tdi_outcome(res, c) for c, p in zip(pats, probs)) / 2 ** rounds
        return total
    if method == "pi":
        for ranking, prob, post in pi_distribution(r1, r2, pi_config, k):
            pats, probs = _patterns(ranking, inst)
            total += prob * float(probs @ expected_sign(np.broadcast_to(post, pats.shape), pats))
        return total
    if method == "oi":
        plan = oi_plan(r1, r2)
        for ranking, prob in zip(plan.allowed, plan.probs):
            shown = ranking[:k]
            credit = np.array([plan.credits[d] for d in shown])
            pats, probs = _patterns(shown, inst)
            total += prob * float(probs @ (pats @ credit))
        return total
    if method == "ips":
        if logging_policy is None:
            raise InvalidInputError("ips needs a logging policy")
        logged = logging_policy.enumerate_rankings(inst.query, k)
        rho = sum(p * _exposure(inst, r) for r, p in logged)
        lam = _exposure(inst, r1) - _exposure(inst, r2)
        for ranking, prob in logged:
            pats, probs = _patterns(ranking, inst)
            values = np.zeros(len(ranking))
            for i, d in enumerate(ranking):
                if rho[d] > RHO_ZERO:
                    values[i] = lam[d] / rho[d]
                elif lam[d] != 0 and inst.zeta[d] > 0:
                    raise SupportViolationError(f"doc {d} is clickable but never examined under logging")
            total += prob * float(probs @ (pats @ values))
        return total
    raise InvalidInputError(f"unknown method {method!r}")


def _check_three_doc(inst: SmallInstance) -> None:
    if (len(inst.zeta) != 3 or inst.k != 3 or inst.ranking1 != (A, B, C)
            or inst.ranking2 != (B, C, A) or inst.zeta[B] != 0.0):
        raise InvalidInputError("closed forms hold only for the three-doc A/B/C fixture shape")


def tdi_closed_form(inst: SmallInstance) -> float:
    _check_three_doc(inst)
    t1, t2, t3 = inst.theta
    za, zc = inst.zeta[A], inst.zeta[C]
    return 0.25 * (t1 * za + t1 * za * (1 - t3 * zc) + t2 * za + t2 * za * (1 - t3 * zc))


def oi_closed_form(inst: SmallInstance) -> float:
    _check_three_doc(inst)
    t1, t2, t3 = inst.theta
    za, zc = inst.zeta[A], inst.zeta[C]
    return (2 * (t1 + t2 + t3) * za - (t2 + 2 * t3) * zc) / 3.0


def _score_dp(assign: np.ndarray, pclick: np.ndarray) -> float:
    """E[sign(sum_i c_i a_i)] for independent clicks c_i ~ Bernoulli(pclick_i)."""
    k = len(assign)
    dist = np.zeros(2 * k + 1)
    dist[k] = 1.0
    for a, p in zip(assign, pclick):
        dist = (1.0 - p) * dist + p * np.roll(dist, int(a))
    return float(dist[k + 1:].sum() - dist[:k].sum())


def tdi_expected_outcome(r1, r2, theta, zeta) -> float:
    """Exact expected team-draft outcome for any candidate count.

    Only the coin flips that decide the displayed top ``len(theta)`` are
    enumerated; clicks are summed with a score-distribution recursion.
    """
    theta = np.asarray(theta, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    k = min(len(theta), len(r1))
    rounds, needed = tdi_rounds(len(r1)), tdi_rounds(k)
    if needed > 20:
        raise EnumerationCapError("too many coin flips to enumerate")
    total = 0.0
    for head in itertools.product((0, 1), repeat=needed):
        res = tdi_from_flips(r1, r2, head + (0,) * (rounds - needed), k)
        assign = np.where(np.array(res.assignments) == 1, 1, -1)
        total += _score_dp(assign, theta[:k] * zeta[list(res.ranking)])
    return total / 2 ** needed


@dataclass(frozen=True)
class SignFlipGrid:
    theta2: tuple = tuple(np.round(np.arange(1, 21) * 0.05, 2))
    theta3: tuple = tuple(np.round(np.arange(1, 21) * 0.05, 2))
    zeta_a: tuple = tuple(np.round(np.arange(11) * 0.1, 1))
    zeta_c: tuple = tuple(np.round(np.arange(11) * 0.1, 1))

    def points(self):
        for t2, t3 in itertools.product(self.theta2, self.theta3):
            if t2 < t3:
                continue
            for za, zc in itertools.product(self.zeta_a, self.zeta_c):
                yield SmallInstance.three_doc((1.0, t2, t3), za, zc)


class Counterexample(NamedTuple):
    method: str
    instance: SmallInstance
    delta: float
    expected: float


def find_sign_flip(method: str, grid: SignFlipGrid = SignFlipGrid(),
                   logging_policy: Policy = None) -> list:
    """Grid points where the method's expected outcome has the wrong sign (Delta != 0)."""
    if method == "ips" and logging_policy is None:
        logging_policy = UniformPolicy()
    out = []
    for inst in grid.points():
        d = inst.delta
        if abs(d) < 1e-12:
            continue
        e = enum_expected_outcome(method, inst, logging_policy)
        if abs(e) < 1e-12:
            e = 0.0
        if delta_bin(e) != delta_bin(d):
            out.append(Counterexample(method, inst, d, e))
    return out


def write_counterexamples(rows: Sequence[Counterexample], stream) -> None:
    stream.write("method,theta1,theta2,theta3,zeta_a,zeta_b,zeta_c,delta,expected_outcome\n")
    for r in rows:
        vals = list(r.instance.theta) + list(r.instance.zeta) + [r.delta, r.expected]
        stream.write(r.method + "," + ",".join(f"{v:.6g}" for v in vals) + "\n")
