"""Tabular expectation-maximization for the position-based click model."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ClickModel, InteractionLog, Query
from .errors import InvalidInputError
from .flatfile import read_layers, write_layers

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 50
    tol: float = 1e-4
    theta_init: Optional[Sequence[float]] = None  # default 1/rank
    zeta_init: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.zeta_init <= 1.0:
            raise InvalidInputError("zeta_init must lie in (0, 1]")
        if self.theta_init is not None:
            th = np.asarray(self.theta_init, dtype=float)
            if np.any(th <= 0) or np.any(th > 1):
                raise InvalidInputError("theta_init entries must lie in (0, 1]")


@dataclass
class ClickCounts:
    """Impression and click counts indexed by (query index, doc, rank)."""

    qids: list
    impressions: np.ndarray
    clicks: np.ndarray

    @classmethod
    def empty(cls, qids: Sequence[int], max_docs: int, num_ranks: int) -> "ClickCounts":
        shape = (len(qids), max_docs, num_ranks)
        return cls(list(qids), np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_log(cls, interactions: InteractionLog) -> "ClickCounts":
        records = list(interactions)
        if not records:
            raise InvalidInputError("cannot fit a click model on an empty log")
        qids = sorted({r.qid for r in records})
        index = {q: i for i, q in enumerate(qids)}
        max_docs = max(max(r.ranking) for r in records if r.ranking) + 1
        num_ranks = max(len(r.ranking) for r in records)
        counts = cls.empty(qids, max_docs, num_ranks)
        for r in records:
            qi = index[r.qid]
            for rank, (d, c) in enumerate(zip(r.ranking, r.clicks)):
                counts.impressions[qi, d, rank] += 1
                counts.clicks[qi, d, rank] += c
        return counts

    def add(self, q_index: np.ndarray, docs: np.ndarray, clicks: np.ndarray) -> None:
        """Accumulate a batch: ``docs`` and ``clicks`` are (B, k) arrays, rank = column."""
        b, k = docs.shape
        qi = np.repeat(q_index, k)
        ranks = np.tile(np.arange(k), b)
        flat_docs = docs.ravel()
        ok = flat_docs >= 0
        np.add.at(self.impressions, (qi[ok], flat_docs[ok], ranks[ok]), 1.0)
        np.add.at(self.clicks, (qi[ok], flat_docs[ok], ranks[ok]), clicks.ravel()[ok])


@dataclass
class EMResult:
    theta: np.ndarray
    zeta: dict
    loglik_trace: list = field(default_factory=list)
    zeta_init: float = 0.5

    def zeta_for(self, query: Query) -> np.ndarray:
        return np.array([self.zeta.get((query.qid, d), self.zeta_init)
                         for d in range(query.n_docs)])

    def click_model(self, queries: Sequence[Query], display_length: int = None) -> ClickModel:
        theta = self.theta if display_length is None else self.theta[:display_length]
        if np.any(np.isnan(theta)):
            raise InvalidInputError("some displayed ranks had no impressions; theta is undefined there")
        return ClickModel(np.clip(theta, 0.0, 1.0), {q.qid: self.zeta_for(q) for q in queries})


def _loglik(theta, zeta, imps, clicks) -> float:
    pc = theta[None, None, :] * zeta[:, :, None]
    skips = imps - clicks
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(clicks > 0, clicks * np.log(pc), 0.0)
        b = np.where(skips > 0, skips * np.log1p(-pc), 0.0)
    return float(a.sum() + b.sum())


def fit_counts(counts: ClickCounts, config: EMConfig = EMConfig()) -> EMResult:
    imps, clicks = counts.impressions, counts.clicks
    if imps.sum() == 0:
        raise InvalidInputError("cannot fit a click model on an empty log")
    num_ranks = imps.shape[2]
    if config.theta_init is None:
        theta = 1.0 / np.arange(1, num_ranks + 1)
    else:
        theta = np.ones(num_ranks)
        init = np.asarray(config.theta_init, dtype=float)[:num_ranks]
        theta[: len(init)] = init
    zeta = np.full(imps.shape[:2], config.zeta_init)
    skips = imps - clicks
    rank_n = imps.sum(axis=(0, 1))
    doc_n = imps.sum(axis=2)
    seen_rank, seen_doc = rank_n > 0, doc_n > 0

    trace = [_loglik(theta, zeta, imps, clicks)]
    for _ in range(config.max_iters):
        t = theta[None, None, :]
        z = zeta[:, :, None]
        denom = 1.0 - t * z
        with np.errstate(divide="ignore", invalid="ignore"):
            exam = np.where(denom > 0, t * (1.0 - z) / denom, 0.0)
            rel = np.where(denom > 0, (1.0 - t) * z / denom, 0.0)
        theta_num = (clicks + skips * exam).sum(axis=(0, 1))
        zeta_num = (clicks + skips * rel).sum(axis=2)
        theta = np.where(seen_rank, theta_num / np.where(seen_rank, rank_n, 1.0), theta)
        zeta = np.where(seen_doc, zeta_num / np.where(seen_doc, doc_n, 1.0), zeta)
        trace.append(_loglik(theta, zeta, imps, clicks))
        if abs(trace[-1] - trace[-2]) < config.tol:
            break

    # PBM is invariant to theta -> c*theta, zeta -> zeta/c; pin theta_1 = 1
    if seen_rank[0] and theta[0] > 0:
        scale = theta[0]
        theta = theta / scale
        zeta = np.where(seen_doc, zeta * scale, zeta)
    else:
        log.warning("rank 1 has no impressions; theta left unanchored")
    theta = np.where(seen_rank, theta, np.nan)
    table = {(counts.qids[qi], int(d)): float(zeta[qi, d]) for qi, d in zip(*np.nonzero(seen_doc))}
    return EMResult(theta, table, trace, config.zeta_init)


def em_fit(interactions: InteractionLog, config: EMConfig = EMConfig()) -> EMResult:
    """Fit theta (per rank) and zeta (per query-doc) to logged clicks.

    Ranks that never received an impression come back as NaN in ``theta``;
    unseen (query, doc) pairs are absent from ``zeta`` and default to
    ``config.zeta_init`` through ``EMResult.zeta_for``.
    """
    return fit_counts(ClickCounts.from_log(interactions), config)


def em_loglik(interactions: InteractionLog, theta, zeta, zeta_default: float = None) -> float:
    """Sum over impressions of log(theta*zeta) if clicked, else log(1 - theta*zeta)."""
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for rec in interactions:
        for rank, (d, c) in enumerate(zip(rec.ranking, rec.clicks)):
            t = theta[rank] if rank < len(theta) else 0.0
            z = zeta.get((rec.qid, d), zeta_default) if isinstance(zeta, dict) else zeta[rec.qid][d]
            if z is None:
                raise InvalidInputError(f"no relevance for query {rec.qid}, doc {d}")
            p = t * z
            if c:
                if p <= 0.0:
                    return -np.inf
                total += np.log(p)
            else:
                if p >= 1.0:
                    return -np.inf
                total += np.log1p(-p)
    return float(total)


def save_em(result: EMResult, stream: io.TextIOBase) -> None:
    rows = np.array([[q, d, v] for (q, d), v in sorted(result.zeta.items())], dtype=float)
    write_layers(stream, [result.theta[None, :], rows.reshape(-1, 3)],
                 {"kind": "pbm-em", "zeta_init": repr(result.zeta_init)})


def load_em(stream: io.TextIOBase) -> EMResult:
    layers, meta = read_layers(stream)
    if meta.get("kind") != "pbm-em" or len(layers) != 2:
        raise InvalidInputError("not a click-model checkpoint")
    zeta = {(int(q), int(d)): float(v) for q, d, v in layers[1]}
    return EMResult(layers[0][0], zeta, [], float(meta.get("zeta_init", 0.5)))
