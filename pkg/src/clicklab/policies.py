"""Ranking policies as sequential (per-rank) placement distributions.

Every policy here places one document per rank, and the placement distribution
depends only on the *set* of documents already placed.  That property is what
lets ``rank_marginals(method="dp")`` sum over placed-sets instead of rankings.
"""

from __future__ import annotations

import io
import itertools
import math
from collections import defaultdict
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import ENUMERATION_CAP, Query, check_ranking
from .errors import EnumerationCapError, InvalidInputError
from .flatfile import read_layers, write_layers

DEFAULT_EPSILON = 0.1
DP_STATE_CAP = 200_000

PlacementFn = Callable[[np.ndarray], np.ndarray]


def softmax_unplaced(scores: np.ndarray, placed: np.ndarray) -> np.ndarray:
    """Softmax of ``scores`` restricted to the docs not yet placed (last axis)."""
    masked = np.where(placed, -np.inf, scores)
    top = masked.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(masked - top)
    total = e.sum(axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def draw_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    d = int(np.searchsorted(cdf, u, side="right"))
    d = min(d, len(probs) - 1)
    while probs[d] <= 0:  # guard against landing on a zero-width bucket
        d -= 1
    return d


class Policy:
    """Base class: subclasses supply ``placement_fn``."""

    def placement_fn(self, query: Query) -> PlacementFn:
        """Return f(placed_mask) -> probabilities over all docs (zero on placed ones)."""
        raise NotImplementedError

    def placement_probs(self, query: Query, prefix: Sequence[int] = ()) -> np.ndarray:
        prefix = check_ranking(prefix, query)
        placed = np.zeros(query.n_docs, dtype=bool)
        placed[list(prefix)] = True
        return self.placement_fn(query)(placed)

    def placement_prob(self, query: Query, prefix: Sequence[int], doc: int) -> float:
        prefix = check_ranking(prefix, query)
        if not 0 <= doc < query.n_docs:
            raise InvalidInputError(f"unknown doc id {doc}")
        if doc in prefix:
            raise InvalidInputError(f"doc {doc} already placed")
        return float(self.placement_probs(query, prefix)[doc])

    def ranking_prob(self, query: Query, ranking: Sequence[int]) -> float:
        ranking = check_ranking(ranking, query)
        f = self.placement_fn(query)
        placed = np.zeros(query.n_docs, dtype=bool)
        prob = 1.0
        for d in ranking:
            prob *= f(placed)[d]
            placed[d] = True
        return float(prob)

    def sample_ranking(self, query: Query, k: int, rng: np.random.Generator) -> tuple:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        f = self.placement_fn(query)
        placed = np.zeros(query.n_docs, dtype=bool)
        out = []
        for _ in range(min(k, query.n_docs)):
            d = draw_index(f(placed), rng)
            out.append(d)
            placed[d] = True
        return tuple(out)

    def enumerate_rankings(self, query: Query, length: int):
        """All rankings of ``length`` docs with nonzero probability, as (ranking, prob)."""
        if query.n_docs > ENUMERATION_CAP:
            raise EnumerationCapError(
                f"{query.n_docs} candidates exceeds the enumeration cap of {ENUMERATION_CAP}")
        length = min(length, query.n_docs)
        f = self.placement_fn(query)
        out = []

        def walk(prefix, placed, prob):
            if len(prefix) == length:
                out.append((tuple(prefix), prob))
                return
            probs = f(placed)
            for d in np.flatnonzero(probs > 0):
                placed[d] = True
                prefix.append(int(d))
                walk(prefix, placed, prob * probs[d])
                prefix.pop()
                placed[d] = False

        walk([], np.zeros(query.n_docs, dtype=bool), 1.0)
        return out

    def rank_marginals(self, query: Query, length: int, method: str = "exact") -> np.ndarray:
        """Matrix M[d, r] = P(doc d is displayed at rank r), r < min(length, n).

        ``exact`` sums over enumerated rankings (capped); ``dp`` sums over
        placed-sets, exact for any candidate count while the set count stays
        below ``DP_STATE_CAP``.
        """
        length = min(length, query.n_docs)
        if method == "exact":
            out = np.zeros((query.n_docs, length))
            for ranking, prob in self.enumerate_rankings(query, length):
                out[list(ranking), np.arange(length)] += prob
            return out
        if method == "dp":
            f = self.placement_fn(query)
            if getattr(f, "batched", False):
                return _marginals_dp_batched(f, query.n_docs, length)
            return _marginals_dp(f, query.n_docs, length)
        raise InvalidInputError(f"unknown marginal method {method!r}")


def _marginals_dp(f: PlacementFn, n: int, length: int) -> np.ndarray:
    out = np.zeros((n, length))
    states = {0: 1.0}
    for r in range(length):
        if len(states) > DP_STATE_CAP:
            raise EnumerationCapError(f"{len(states)} placed-sets exceed the DP cap")
        nxt = defaultdict(float)
        for bits, p in states.items():
            placed = np.array([(bits >> d) & 1 for d in range(n)], dtype=bool)
            probs = f(placed)
            for d in np.flatnonzero(probs > 0):
                w = p * probs[d]
                out[d, r] += w
                if r + 1 < length:
                    nxt[bits | (1 << int(d))] += w
        states = nxt
    return out


def _marginals_dp_batched(f: PlacementFn, n: int, length: int) -> np.ndarray:
    """Same sum as ``_marginals_dp`` with every placed-set of a rank done at once."""
    out = np.zeros((n, length))
    bits = np.zeros(1, dtype=np.int64)
    mass = np.ones(1)
    powers = np.int64(1) << np.arange(n, dtype=np.int64)
    for r in range(length):
        if len(bits) > DP_STATE_CAP:
            raise EnumerationCapError(f"{len(bits)} placed-sets exceed the DP cap")
        placed = (bits[:, None] & powers) != 0
        flow = mass[:, None] * f(placed)
        out[:, r] = flow.sum(axis=0)
        if r + 1 < length:
            s, d = np.nonzero(flow > 0)
            bits, inverse = np.unique(bits[s] | powers[d], return_inverse=True)
            mass = np.bincount(inverse.ravel(), weights=flow[s, d], minlength=len(bits))
    return out


def _batched(f: PlacementFn) -> PlacementFn:
    f.batched = True
    return f


class DeterministicPolicy(Policy):
    """Point mass on one full ranking per query."""

    def __init__(self, orders: Mapping[int, Sequence[int]]):
        self.orders = {int(q): tuple(int(d) for d in o) for q, o in orders.items()}

    @classmethod
    def from_scores(cls, scores: Mapping[int, np.ndarray]) -> "DeterministicPolicy":
        """Sort by descending score, breaking ties by ascending doc id."""
        orders = {}
        for q, s in scores.items():
            s = np.asarray(s, dtype=float)
            orders[q] = np.lexsort((np.arange(len(s)), -s))
        return cls(orders)

    def ranking(self, query: Query) -> tuple:
        try:
            order = self.orders[query.qid]
        except KeyError:
            raise InvalidInputError(f"no ranking for query {query.qid}") from None
        if sorted(order) != list(range(query.n_docs)):
            raise InvalidInputError(f"ranking for query {query.qid} is not a permutation")
        return order

    def placement_fn(self, query):
        order = np.array(self.ranking(query))

        def f(placed):
            out = np.zeros(len(placed))
            rest = order[~placed[order]]
            if len(rest):
                out[rest[0]] = 1.0
            return out
        return f

    def sample_ranking(self, query, k, rng=None):
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        return self.ranking(query)[:k]

    def rank_marginals(self, query, length, method="exact"):
        length = min(length, query.n_docs)
        out = np.zeros((query.n_docs, length))
        out[list(self.ranking(query)[:length]), np.arange(length)] = 1.0
        return out


class UniformPolicy(Policy):
    def placement_fn(self, query):
        def f(placed):
            free = ~placed
            return free / np.maximum(free.sum(axis=-1, keepdims=True), 1)
        return _batched(f)

    def rank_marginals(self, query, length, method="exact"):
        length = min(length, query.n_docs)
        return np.full((query.n_docs, length), 1.0 / query.n_docs)


class ScoreNetwork:
    """Feed-forward scorer: tanh hidden layers, one linear output per document."""

    def __init__(self, in_dim: int, hidden=(32, 32), rng: np.random.Generator = None,
                 layers=None):
        self.in_dim = int(in_dim)
        self.hidden = tuple(int(h) for h in hidden)
        if layers is not None:
            self.layers = [(np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in layers]
            return
        if rng is None:
            raise InvalidInputError("ScoreNetwork needs an rng or explicit layers")
        sizes = (self.in_dim,) + self.hidden + (1,)
        self.layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            # Glorot normal keeps activation variance roughly constant through tanh
            std = math.sqrt(2.0 / (fan_in + fan_out))
            self.layers.append((rng.normal(0.0, std, size=(fan_in, fan_out)), np.zeros(fan_out)))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(self.layers):
            nw = flat[pos: pos + w.size].reshape(w.shape)
            pos += w.size
            nb = flat[pos: pos + b.size].copy()
            pos += b.size
            self.layers[i] = (nw.copy(), nb)

    def copy(self) -> "ScoreNetwork":
        return ScoreNetwork(self.in_dim, self.hidden, layers=[(w.copy(), b.copy()) for w, b in self.layers])

    def scores(self, features: np.ndarray) -> np.ndarray:
        h = np.asarray(features, dtype=float)
        for w, b in self.layers[:-1]:
            h = np.tanh(h @ w + b)
        w, b = self.layers[-1]
        return (h @ w + b)[:, 0]

    def jacobian(self, features: np.ndarray):
        """Scores and d score_j / d params for every document j: shapes (n,), (n, P)."""
        acts = [np.asarray(features, dtype=float)]
        for w, b in self.layers[:-1]:
            acts.append(np.tanh(acts[-1] @ w + b))
        w_out, b_out = self.layers[-1]
        scores = (acts[-1] @ w_out + b_out)[:, 0]
        n = len(scores)
        blocks = [None] * len(self.layers)
        blocks[-1] = np.concatenate([acts[-1], np.ones((n, 1))], axis=1)
        g = np.broadcast_to(w_out[:, 0], (n, w_out.shape[0]))
        for i in range(len(self.layers) - 2, -1, -1):
            g = g * (1.0 - acts[i + 1] ** 2)
            dw = (acts[i][:, :, None] * g[:, None, :]).reshape(n, -1)
            blocks[i] = np.concatenate([dw, g], axis=1)
            if i > 0:
                g = g @ self.layers[i][0].T
        return scores, np.concatenate(blocks, axis=1)


class ScoreNetworkPolicy(Policy):
    """Plackett-Luce policy: softmax over network scores of the unplaced docs."""

    def __init__(self, network: ScoreNetwork):
        self.network = network

    @classmethod
    def init(cls, in_dim: int, rng: np.random.Generator, hidden=(32, 32)) -> "ScoreNetworkPolicy":
        return cls(ScoreNetwork(in_dim, hidden, rng))

    def placement_fn(self, query):
        scores = self.network.scores(query.features)
        return _batched(lambda placed: softmax_unplaced(scores, placed))

    def sample_ranking(self, query, k, rng):
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        # Gumbel top-k gives exactly the sequential softmax distribution
        scores = self.network.scores(query.features)
        keys = scores + rng.gumbel(size=len(scores))
        return tuple(int(d) for d in np.argsort(-keys, kind="stable")[:k])


class MixturePolicy(Policy):
    """(1 - epsilon) * base + epsilon * uniform, applied at every placement step."""

    def __init__(self, base: Policy, epsilon: float = DEFAULT_EPSILON):
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidInputError("epsilon must lie in [0, 1]")
        self.base = base
        self.epsilon = float(epsilon)

    def placement_fn(self, query):
        base_f = self.base.placement_fn(query)
        eps = self.epsilon

        def f(placed):
            free = ~placed
            return (1.0 - eps) * base_f(placed) + eps * free / np.maximum(free.sum(axis=-1, keepdims=True), 1)
        if getattr(base_f, "batched", False):
            return _batched(f)
        return f


def placement_logprob_grad(policy: ScoreNetworkPolicy, query: Query, prefix: Sequence[int],
                           doc: int) -> np.ndarray:
    """Gradient of log P(doc placed next | prefix) w.r.t. the flat network parameters."""
    prefix = check_ranking(prefix, query)
    if not 0 <= doc < query.n_docs:
        raise InvalidInputError(f"unknown doc id {doc}")
    if doc in prefix:
        raise InvalidInputError(f"doc {doc} already placed")
    scores, jac = policy.network.jacobian(query.features)
    placed = np.zeros(query.n_docs, dtype=bool)
    placed[list(prefix)] = True
    p = softmax_unplaced(scores, placed)
    return jac[doc] - p @ jac


def all_rankings(n: int, length: int):
    return list(itertools.permutations(range(n), min(length, n)))


def save_policy(policy: Policy, stream: io.TextIOBase) -> None:
    eps = 0.0
    if isinstance(policy, MixturePolicy):
        eps = policy.epsilon
        policy = policy.base
    if not isinstance(policy, ScoreNetworkPolicy):
        raise InvalidInputError("only score-network policies (optionally mixed) are serializable")
    net = policy.network
    layers = []
    for w, b in net.layers:
        layers += [w, b[None, :]]
    meta = {"kind": "score-network", "epsilon": repr(eps),
            "in_dim": net.in_dim, "hidden": ",".join(map(str, net.hidden))}
    write_layers(stream, layers, meta)


def load_policy(stream: io.TextIOBase) -> Policy:
    layers, meta = read_layers(stream)
    if meta.get("kind") != "score-network" or len(layers) % 2:
        raise InvalidInputError("not a score-network checkpoint")
    hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
    pairs = [(layers[i], layers[i + 1][0]) for i in range(0, len(layers), 2)]
    policy = ScoreNetworkPolicy(ScoreNetwork(int(meta["in_dim"]), hidden, layers=pairs))
    eps = float(meta.get("epsilon", 0.0))
    return MixturePolicy(policy, eps) if eps > 0 else policy
