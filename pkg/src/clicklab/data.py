"""LETOR-style datasets, synthetic data, simple linear rankers, and log files."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .core import InteractionLog, InteractionRecord, Query
from .errors import DegenerateTrainingError, InvalidInputError, ParseError
from .policies import DeterministicPolicy

LABEL_CUTS = (30, 55, 75, 90)
HINGE_UPDATES = 10_000
HINGE_STEP = 0.01


@dataclass(frozen=True, eq=False)
class Dataset:
    queries: tuple
    feature_dim: int

    def __post_init__(self):
        queries = tuple(self.queries)
        for q in queries:
            if q.feature_dim != self.feature_dim:
                raise InvalidInputError(
                    f"query {q.qid} has feature dim {q.feature_dim}, dataset says {self.feature_dim}")
        object.__setattr__(self, "queries", queries)

    def __len__(self):
        return len(self.queries)

    def by_qid(self) -> dict:
        return {q.qid: q for q in self.queries}

    def rankable(self) -> "Dataset":
        """Only the queries with at least two candidate documents."""
        return Dataset(tuple(q for q in self.queries if q.n_docs >= 2), self.feature_dim)


@dataclass(eq=False)
class LinearRanker:
    weights: np.ndarray
    feature_mask: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.feature_mask = np.asarray(self.feature_mask, dtype=bool)
        if self.weights.shape != self.feature_mask.shape:
            raise InvalidInputError("weights and mask must have the same length")
        if np.any(self.weights[~self.feature_mask] != 0):
            raise InvalidInputError("masked-out features must have weight 0")

    def scores(self, query: Query) -> np.ndarray:
        return query.features @ self.weights

    def policy(self, queries: Iterable[Query]) -> DeterministicPolicy:
        return DeterministicPolicy.from_scores({q.qid: self.scores(q) for q in queries})


def parse_letor(source) -> Dataset:
    """Parse ``<label> qid:<int> <fid>:<float> ... [# comment]`` lines.

    ``source`` may be bytes, str, or a binary/text stream.  Documents are grouped
    by qid in order of first appearance; labels are clamped to 0..4.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    groups: dict = {}
    max_fid = 0
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            label = int(float(parts[0]))
        except ValueError:
            raise ParseError(f"bad label {parts[0]!r}", n) from None
        if len(parts) < 2 or not parts[1].startswith("qid:"):
            raise ParseError("missing qid", n)
        try:
            qid = int(parts[1][4:])
        except ValueError:
            raise ParseError(f"bad qid {parts[1]!r}", n) from None
        feats = {}
        for tok in parts[2:]:
            fid, sep, val = tok.partition(":")
            try:
                fid_i, val_f = int(fid), float(val)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", n) from None
            if not sep or fid_i < 1:
                raise ParseError(f"bad feature {tok!r}", n)
            feats[fid_i] = val_f
            max_fid = max(max_fid, fid_i)
        groups.setdefault(qid, []).append((min(max(label, 0), 4), feats))

    if not groups:
        raise InvalidInputError("no documents in LETOR input")
    queries = []
    for qid, docs in groups.items():
        x = np.zeros((len(docs), max_fid))
        for i, (_, feats) in enumerate(docs):
            for fid, val in feats.items():
                x[i, fid - 1] = val
        queries.append(Query(qid, x, np.array([lab for lab, _ in docs])))
    return Dataset(tuple(queries), max_fid)


def serialize_letor(dataset: Dataset) -> str:
    out = io.StringIO()
    for q in dataset.queries:
        for label, row in zip(q.labels, q.features):
            feats = " ".join(f"{i + 1}:{float(v)!r}" for i, v in enumerate(row))
            out.write(f"{int(label)} qid:{q.qid} {feats}".rstrip() + "\n")
    return out.getvalue()


def generate_synthetic(num_queries: int, docs_per_query: int, feature_dim: int,
                       rng: np.random.Generator, noise: float = 0.5) -> Dataset:
    """Gaussian features; labels bucket a noisy linear score at fixed percentiles."""
    if min(num_queries, docs_per_query, feature_dim) < 1:
        raise InvalidInputError("all counts must be >= 1")
    x = rng.standard_normal((num_queries, docs_per_query, feature_dim))
    w = rng.standard_normal(feature_dim) / math.sqrt(feature_dim)
    score = x @ w + noise * rng.standard_normal((num_queries, docs_per_query))
    cuts = np.percentile(score, LABEL_CUTS)
    labels = np.searchsorted(cuts, score, side="right")
    queries = tuple(Query(i, x[i], labels[i]) for i in range(num_queries))
    return Dataset(queries, feature_dim)


def _discordant_pairs(query: Query):
    lab = query.labels
    hi, lo = np.nonzero(lab[:, None] > lab[None, :])
    return hi, lo


def train_linear_ranker(dataset: Dataset, num_train_queries: int, feature_fraction: float,
                        rng: np.random.Generator, updates: int = HINGE_UPDATES,
                        step: float = HINGE_STEP) -> LinearRanker:
    """Pairwise hinge loss on label-ordered pairs, fitted by stochastic subgradient steps.

    Only ``ceil(dim * feature_fraction)`` randomly chosen features may carry weight.
    """
    if not 0.0 < feature_fraction <= 1.0:
        raise InvalidInputError("feature_fraction must lie in (0, 1]")
    dim = dataset.feature_dim
    n_train = min(num_train_queries, len(dataset))
    train_idx = rng.choice(len(dataset), size=n_train, replace=False)
    mask = np.zeros(dim, dtype=bool)
    mask[rng.choice(dim, size=math.ceil(dim * feature_fraction), replace=False)] = True

    pairs = []
    for i in train_idx:
        q = dataset.queries[i]
        hi, lo = _discordant_pairs(q)
        if len(hi):
            pairs.append(q.features[hi] - q.features[lo])
    if not pairs:
        raise DegenerateTrainingError("training queries contain no pair with different labels")
    diffs = np.concatenate(pairs)[:, mask]

    w = np.zeros(mask.sum())
    picks = rng.integers(len(diffs), size=updates)
    for j in picks:
        d = diffs[j]
        if w @ d < 1.0:
            w += step * d
    weights = np.zeros(dim)
    weights[mask] = w
    return LinearRanker(weights, mask)


def write_ranker(ranker: LinearRanker, stream: TextIO) -> None:
    stream.write(f"dim={len(ranker.weights)}\n")
    for i in np.flatnonzero(ranker.weights):
        stream.write(f"{i} {float(ranker.weights[i])!r}\n")


def read_ranker(stream: TextIO) -> LinearRanker:
    lines = [ln.strip() for ln in stream if ln.strip()]
    if not lines or not lines[0].startswith("dim="):
        raise ParseError("ranker file must start with dim=<int>", 1)
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise ParseError("bad dim header", 1) from None
    weights = np.zeros(dim)
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        try:
            idx, val = int(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            raise ParseError(f"bad weight line {ln!r}", n) from None
        if not 0 <= idx < dim:
            raise ParseError(f"weight index {idx} out of range", n)
        weights[idx] = val
    return LinearRanker(weights, weights != 0)


def write_log(log: InteractionLog, stream: TextIO) -> None:
    for rec in log:
        docs = ",".join(map(str, rec.ranking))
        clicks = ",".join(map(str, rec.clicks))
        stream.write(f"{rec.qid}\t{docs}\t{clicks}\n")


def read_log(stream: TextIO) -> InteractionLog:
    log = InteractionLog()
    for n, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected qid<TAB>docs<TAB>clicks", n)
        try:
            qid = int(parts[0])
            docs = tuple(int(d) for d in parts[1].split(",") if d)
            clicks = tuple(int(c) for c in parts[2].split(",") if c)
            log.append(InteractionRecord(qid, docs, clicks))
        except (ValueError, InvalidInputError) as exc:
            raise ParseError(str(exc), n) from None
    return log
