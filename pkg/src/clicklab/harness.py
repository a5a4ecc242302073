"""Experiment driver: many ranker pairs, every comparison method, metric checkpoints.

Each (pair, method) cell draws from its own generator seeded by
``(master seed, pair index, method index)``, so results do not depend on
which other methods run or on how pairs are spread over worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .clicks import SimulationConfig, build_click_model
from .core import RHO_ZERO, ClickModel, QueryDistribution, delta, delta_bin
from .data import Dataset, generate_synthetic, parse_letor, train_linear_ranker
from .em import ClickCounts, EMConfig, fit_counts
from .errors import ClickLabError, InvalidInputError, SupportViolationError
from .estimators import EstimateSeries, metrics
from .interleaving import expected_sign, oi_plan, tdi_from_flips, tdi_rounds
from .logopt import OptimizerConfig, VarianceContext, sample_rankings, train_logging_policy
from .oracles import tdi_expected_outcome
from .policies import DeterministicPolicy

log = logging.getLogger(__name__)

METHODS = ("ab", "tdi", "pi", "oi", "ips-uniform", "ips-ab", "ips-logopt", "ips-oracle-logopt")
RESULT_COLUMNS = ("pair_id", "method", "queries", "binary_error", "absolute_error", "mse",
                  "true_delta", "delta_hat", "error")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    synthetic_queries: int = 100
    synthetic_docs: int = 10
    synthetic_features: int = 16
    synthetic_noise: float = 0.5
    pairs: int = 20
    methods: tuple = ("ab", "tdi", "ips-uniform", "ips-logopt")
    budget: int = 100_000
    checkpoints: tuple = (1_000, 10_000, 100_000)
    seed: int = 0
    ranker_train_queries: int = 20
    ranker_feature_fraction: float = 0.5
    display_length: int = 10
    bias_exponent: float = 1.0
    zeta_slope: float = 0.225
    zeta_intercept: float = 0.1
    pi_tau: float = 4.0
    bias_known: bool = False
    logopt_steps: int = 1_000
    learning_rate: float = 1e-2
    epsilon: float = 0.1
    update_schedule: tuple = (1_000, 10_000, 100_000, 1_000_000)
    logopt_m: int = 32
    batch_size: int = 10_000

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise InvalidInputError(f"unknown methods {sorted(bad)}")
        cps = tuple(int(c) for c in self.checkpoints)
        if not cps or any(b <= a for a, b in zip(cps, cps[1:])) or cps[0] < 1:
            raise InvalidInputError("checkpoints must be positive and strictly increasing")
        if cps[-1] > self.budget:
            raise InvalidInputError("checkpoints must not exceed the query budget")
        if self.pairs < 1 or self.batch_size < 1:
            raise InvalidInputError("pairs and batch_size must be >= 1")
        self.simulation
        self.optimizer

    @property
    def simulation(self) -> SimulationConfig:
        return SimulationConfig(self.display_length, self.bias_exponent, self.zeta_slope,
                                self.zeta_intercept)

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(steps=self.logopt_steps, learning_rate=self.learning_rate,
                               epsilon=self.epsilon, update_schedule=self.update_schedule,
                               M=self.logopt_m)

    @classmethod
    def from_text(cls, text: str, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        """Parse ``key = value`` lines (``#`` comments), then apply ``key=value`` overrides."""
        pairs = []
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"config line {n}: expected key = value")
            pairs.append(line.split("=", 1))
        for item in overrides:
            if "=" not in item:
                raise InvalidInputError(f"override {item!r}: expected key=value")
            pairs.append(item.split("=", 1))
        return cls.from_pairs((k.strip(), v.strip()) for k, v in pairs)

    @classmethod
    def from_pairs(cls, items: Iterable) -> "ExperimentConfig":
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in items:
            if key not in known:
                raise InvalidInputError(f"unknown config key {key!r}")
            values[key] = _coerce(getattr(defaults, key), raw, key)
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(default, raw: str, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(float(s)) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise InvalidInputError(f"bad value {raw!r} for {key}") from None


# ----------------------------------------------------------------- setup

@dataclass(eq=False)
class PairSetup:
    pair_id: int
    dist: QueryDistribution
    policy1: DeterministicPolicy
    policy2: DeterministicPolicy
    model: ClickModel

    @property
    def true_delta(self) -> float:
        return delta(self.policy1, self.policy2, self.dist, self.model)

    def tdi_expected(self) -> float:
        """Exact long-run team-draft outcome, for spotting pairs it gets wrong."""
        total = 0.0
        for q, w in self.dist:
            total += w * tdi_expected_outcome(self.policy1.ranking(q), self.policy2.ranking(q),
                                              self.model.theta, self.model.zeta_for(q))
        return total


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "synthetic":
        rng = np.random.default_rng([config.seed, 0])
        data = generate_synthetic(config.synthetic_queries, config.synthetic_docs,
                                  config.synthetic_features, rng, config.synthetic_noise)
    else:
        with open(config.dataset, "rb") as fh:
            data = parse_letor(fh)
    data = data.rankable()
    if len(data) == 0:
        raise InvalidInputError("dataset has no query with two or more documents")
    return data


def build_pairs(config: ExperimentConfig, data: Dataset = None):
    """One ``PairSetup`` (or the exception that prevented it) per pair index."""
    data = data or load_dataset(config)
    return [build_pair(config, data, i) for i in range(config.pairs)]


def build_pair(config: ExperimentConfig, data: Dataset, i: int):
    model = build_click_model(data.queries, config.simulation)
    rng = np.random.default_rng([config.seed, 1, i])
    try:
        r1, r2 = (train_linear_ranker(data, config.ranker_train_queries,
                                      config.ranker_feature_fraction, rng) for _ in range(2))
        return PairSetup(i, QueryDistribution(data.queries), r1.policy(data.queries),
                         r2.policy(data.queries), model)
    except ClickLabError as exc:
        return exc


# ----------------------------------------------------------- simulation

class _Tables:
    """Per-query arrays padded to a common doc count; ``pad`` is a never-clicked sentinel."""

    def __init__(self, setup: PairSetup):
        self.setup = setup
        qs = setup.dist.queries
        self.queries = qs
        self.weights = setup.dist.weights
        self.theta = setup.model.theta
        self.k = len(self.theta)
        self.n = np.array([q.n_docs for q in qs])
        self.pad = int(self.n.max())
        self.kq = np.minimum(self.n, self.k)
        self.zeta = np.zeros((len(qs), self.pad + 1))
        self.r1 = np.full((len(qs), self.k), self.pad)
        self.r2 = np.full((len(qs), self.k), self.pad)
        self.marg1 = np.zeros((len(qs), self.pad, self.k))
        self.marg2 = np.zeros((len(qs), self.pad, self.k))
        for i, q in enumerate(qs):
            self.zeta[i, : q.n_docs] = setup.model.zeta_for(q)
            k = self.kq[i]
            a, b = setup.policy1.ranking(q)[:k], setup.policy2.ranking(q)[:k]
            self.r1[i, :k], self.r2[i, :k] = a, b
            self.marg1[i, list(a), np.arange(k)] = 1.0
            self.marg2[i, list(b), np.arange(k)] = 1.0

    def sample_queries(self, count: int, rng) -> np.ndarray:
        return rng.choice(len(self.queries), size=count, p=self.weights)

    def clicks(self, qi: np.ndarray, rankings: np.ndarray, rng) -> np.ndarray:
        probs = self.theta * self.zeta[qi[:, None], rankings]
        return (rng.random(rankings.shape) < probs).astype(float)


def _sample_rows(probs: np.ndarray, rng) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)
    # a rounding overshoot can only land on a trailing zero-probability entry
    last = probs.shape[1] - 1 - np.argmax((probs > 0)[:, ::-1], axis=1)
    return np.minimum(idx, last)


class _Online:
    """Interleaving / A-B cells: the estimate is the mean of per-interaction outcomes."""

    def __init__(self, t: _Tables, truth: float):
        self.t = t
        self.series = EstimateSeries(truth=truth)

    def run(self, count: int, rng) -> None:
        qi = self.t.sample_queries(count, rng)
        self.series.extend(self.estimates(qi, rng))

    def report(self, truth: float):
        m = metrics(self.series, truth)
        return self.series.mean, m


class _AB(_Online):
    def estimates(self, qi, rng):
        first = rng.integers(2, size=len(qi)) == 0
        rankings = np.where(first[:, None], self.t.r1[qi], self.t.r2[qi])
        c = self.t.clicks(qi, rankings, rng)
        return np.where(first, 2.0, -2.0) * c.sum(axis=1)


class _TDI(_Online):
    def __init__(self, t, truth):
        super().__init__(t, truth)
        heads = tdi_rounds(t.k)
        combos = list(np.ndindex(*(2,) * heads))
        self.rankings = np.full((len(t.queries), len(combos), t.k), t.pad)
        self.assign = np.zeros((len(t.queries), len(combos), t.k))
        for i, q in enumerate(t.queries):
            r1, r2 = t.setup.policy1.ranking(q), t.setup.policy2.ranking(q)
            rounds, k = tdi_rounds(q.n_docs), t.kq[i]
            for j, head in enumerate(combos):
                flips = (tuple(head) + (0,) * rounds)[:rounds]
                res = tdi_from_flips(r1, r2, flips, k)
                self.rankings[i, j, :k] = res.ranking
                self.assign[i, j, :k] = [1.0 if a == 1 else -1.0 for a in res.assignments]

    def estimates(self, qi, rng):
        j = rng.integers(self.rankings.shape[1], size=len(qi))
        c = self.t.clicks(qi, self.rankings[qi, j], rng)
        return np.sign((c * self.assign[qi, j]).sum(axis=1))


class _PI(_Online):
    def __init__(self, t, truth, tau):
        super().__init__(t, truth)
        self.w1 = np.zeros((len(t.queries), t.pad + 1))
        self.w2 = np.zeros_like(self.w1)
        for i, q in enumerate(t.queries):
            ranks = np.arange(1, q.n_docs + 1, dtype=float) ** (-tau)
            self.w1[i, list(t.setup.policy1.ranking(q))] = ranks
            self.w2[i, list(t.setup.policy2.ranking(q))] = ranks

    def estimates(self, qi, rng):
        t, b = self.t, len(qi)
        avail = self.w1[qi] > 0
        w1, w2 = self.w1[qi], self.w2[qi]
        rankings = np.full((b, t.k), t.pad)
        post = np.full((b, t.k), 0.5)
        rows = np.arange(b)
        for r in range(t.k):
            live = r < t.kq[qi]
            use1 = rng.integers(2, size=b) == 0
            w = np.where(use1[:, None], w1, w2) * avail
            w[~live, t.pad] = 1.0
            d = _sample_rows(w, rng)
            d = np.where(live, d, t.pad)
            s1 = (w1 * avail).sum(axis=1)
            s2 = (w2 * avail).sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                p1 = w1[rows, d] / s1
                p2 = w2[rows, d] / s2
                post[:, r] = np.where(live, p1 / (p1 + p2), 0.5)
            rankings[:, r] = d
            avail[rows, d] = False
        c = self.t.clicks(qi, rankings, rng)
        return expected_sign(post, c)


class _OI(_Online):
    def __init__(self, t, truth):
        super().__init__(t, truth)
        plans = [oi_plan(t.setup.policy1.ranking(q), t.setup.policy2.ranking(q)) for q in t.queries]
        width = max(len(p.allowed) for p in plans)
        self.rankings = np.full((len(plans), width, t.k), t.pad)
        self.credit = np.zeros((len(plans), width, t.k))
        self.probs = np.zeros((len(plans), width))
        for i, p in enumerate(plans):
            k = t.kq[i]
            for j, ranking in enumerate(p.allowed):
                self.rankings[i, j, :k] = ranking[:k]
                self.credit[i, j, :k] = [p.credits[d] for d in ranking[:k]]
            self.probs[i, : len(p.allowed)] = p.probs

    def estimates(self, qi, rng):
        j = _sample_rows(self.probs[qi], rng)
        c = self.t.clicks(qi, self.rankings[qi, j], rng)
        return (c * self.credit[qi, j]).sum(axis=1)


@dataclass
class _Epoch:
    marginals: np.ndarray   # (nq, pad, k) rank marginals of the logging policy
    click_sum: np.ndarray   # (nq, pad + 1) clicks per doc
    coclick: np.ndarray     # (nq, pad + 1, pad + 1) sum of c c^T
    sampler: object = None


class _IPS:
    """Counterfactual cells: sufficient statistics per logging epoch, estimate at report time."""

    def __init__(self, t: _Tables, truth: float, kind: str, config: ExperimentConfig, rng):
        self.t, self.kind, self.config = t, kind, config
        self.counts = ClickCounts.empty(list(range(len(t.queries))), t.pad, t.k)
        self.epochs = []
        self.issued = 0
        self.per_query = np.zeros(len(t.queries))
        if kind == "ips-oracle-logopt":
            zeta = {q.qid: t.setup.model.zeta_for(q) for q in t.queries}
            ctx = VarianceContext(truth, t.theta, zeta, self._lam_table(t.theta), config.logopt_m)
            policy, _ = train_logging_policy(t.queries, ctx, config.optimizer, rng, weights=t.weights)
            self._start_epoch(policy)
        elif kind == "ips-ab":
            self._start_epoch("ab")
        else:
            self._start_epoch("uniform")

    def _lam_table(self, theta):
        lam = (self.t.marg1 - self.t.marg2) @ theta
        return {q.qid: lam[i, : q.n_docs] for i, q in enumerate(self.t.queries)}

    def _start_epoch(self, policy) -> None:
        t = self.t
        nq = len(t.queries)
        if policy == "uniform":
            marg = np.zeros((nq, t.pad, t.k))
            for i in range(nq):
                marg[i, : t.n[i], : t.kq[i]] = 1.0 / t.n[i]
        elif policy == "ab":
            marg = 0.5 * (t.marg1 + t.marg2)
        else:
            marg = np.zeros((nq, t.pad, t.k))
            for i, q in enumerate(t.queries):
                marg[i, : q.n_docs, : t.kq[i]] = policy.rank_marginals(q, t.kq[i], "dp")
        self.epochs.append(_Epoch(marg, np.zeros((nq, t.pad + 1)),
                                  np.zeros((nq, t.pad + 1, t.pad + 1)), policy))

    def _rankings(self, qi, rng) -> np.ndarray:
        t, policy = self.t, self.epochs[-1].sampler
        b = len(qi)
        if policy == "uniform":
            keys = rng.random((b, t.pad))
            keys[np.arange(t.pad)[None, :] >= t.n[qi][:, None]] = np.inf
            out = np.argsort(keys, axis=1)[:, : t.k]
        elif policy == "ab":
            first = rng.integers(2, size=b) == 0
            out = np.where(first[:, None], t.r1[qi], t.r2[qi])
        else:
            out = np.empty((b, t.k), dtype=int)
            base, eps = policy.base, policy.epsilon
            for i in np.unique(qi):
                rows = np.flatnonzero(qi == i)
                q = t.queries[i]
                sub = np.full((len(rows), t.k), t.pad)
                sub[:, : t.kq[i]] = sample_rankings(base.network.scores(q.features), eps, len(rows),
                                                    t.kq[i], rng)[0]
                out[rows] = sub
        pos = np.arange(t.k)[None, :]
        return np.where(pos < t.kq[qi][:, None], out, t.pad)

    def run(self, count: int, rng) -> None:
        t = self.t
        qi = t.sample_queries(count, rng)
        rankings = self._rankings(qi, rng)
        c = t.clicks(qi, rankings, rng)
        self.counts.add(qi, np.where(rankings == t.pad, -1, rankings), c)
        x = np.zeros((count, t.pad + 1))
        np.add.at(x, (np.repeat(np.arange(count), t.k), rankings.ravel()), c.ravel())
        ep = self.epochs[-1]
        np.add.at(ep.click_sum, qi, x)
        np.add.at(ep.coclick, qi, x[:, :, None] * x[:, None, :])
        self.issued += count
        self.per_query += np.bincount(qi, minlength=len(t.queries))

    def theta_hat(self) -> np.ndarray:
        if self.config.bias_known:
            return self.t.theta
        return np.nan_to_num(self._fit().theta, nan=0.0).clip(0.0, 1.0)

    def _fit(self):
        return fit_counts(self.counts, EMConfig())

    def _estimate(self, theta):
        """(sum x, sum x^2) over all interactions under bias ``theta``."""
        lam = (self.t.marg1 - self.t.marg2) @ theta
        sx = sxx = 0.0
        for ep in self.epochs:
            rho = ep.marginals @ theta
            w = np.zeros_like(ep.click_sum)
            ok = rho > RHO_ZERO
            w[:, :-1][ok] = lam[ok] / rho[ok]
            if np.any((ep.click_sum[:, :-1] > 0) & ~ok & (lam != 0)):
                raise SupportViolationError("click on a doc with zero logging propensity")
            sx += float((w * ep.click_sum).sum())
            sxx += float(np.einsum("qd,qde,qe->", w, ep.coclick, w))
        return sx, sxx

    def report(self, truth: float):
        sx, sxx = self._estimate(self.theta_hat())
        n = self.issued
        est = sx / n
        mse = max(truth * truth - 2.0 * truth * est + sxx / n, 0.0)
        return est, (int(delta_bin(est) != delta_bin(truth)), abs(truth - est), mse)

    def refit(self, rng) -> None:
        """Re-estimate the click model and train a new logging policy on it."""
        t = self.t
        fit = self._fit()
        theta = t.theta if self.config.bias_known else np.nan_to_num(fit.theta, nan=0.0).clip(0, 1)
        seen = np.flatnonzero(self.per_query)
        queries = [t.queries[i] for i in seen]
        zeta = {q.qid: np.clip(np.array([fit.zeta.get((i, d), fit.zeta_init)
                                         for d in range(q.n_docs)]), 0.0, 1.0)
                for i, q in zip(seen, queries)}
        sx, _ = self._estimate(theta)
        ctx = VarianceContext(sx / self.issued, theta, zeta, self._lam_table(theta),
                              self.config.logopt_m)
        w = self.per_query[seen] / self.per_query[seen].sum()
        policy, _ = train_logging_policy(queries, ctx, self.config.optimizer, rng, weights=w)
        self._start_epoch(policy)


def _make_cell(method: str, t: _Tables, truth: float, config: ExperimentConfig, rng):
    if method == "ab":
        return _AB(t, truth)
    if method == "tdi":
        return _TDI(t, truth)
    if method == "pi":
        return _PI(t, truth, config.pi_tau)
    if method == "oi":
        return _OI(t, truth)
    return _IPS(t, truth, method, config, rng)


@dataclass
class ResultRow:
    pair_id: int
    method: str
    queries: int
    binary_error: float = math.nan
    absolute_error: float = math.nan
    mse: float = math.nan
    true_delta: float = math.nan
    delta_hat: float = math.nan
    error: str = ""
    seconds: float = 0.0

    def csv_fields(self) -> list:
        def fmt(v):
            return "" if isinstance(v, float) and math.isnan(v) else f"{v:.6g}"
        return [str(self.pair_id), self.method, str(self.queries), fmt(self.binary_error),
                fmt(self.absolute_error), fmt(self.mse), fmt(self.true_delta), fmt(self.delta_hat),
                self.error]


def run_cell(setup: PairSetup, method: str, config: ExperimentConfig, truth: float = None) -> list:
    """All checkpoint rows for one (pair, method); errors become a single error row."""
    rng = np.random.default_rng([config.seed, 2, setup.pair_id, METHODS.index(method)])
    truth = setup.true_delta if truth is None else truth
    start = time.perf_counter()
    rows = []
    try:
        t = _Tables(setup)
        cell = _make_cell(method, t, truth, config, rng)
        refits = [s for s in config.update_schedule if s < config.budget] if method == "ips-logopt" else []
        stops = sorted(set(config.checkpoints) | set(refits))
        issued = 0
        for stop in stops:
            while issued < stop:
                n = min(config.batch_size, stop - issued)
                cell.run(n, rng)
                issued += n
            if stop in config.checkpoints:
                est, m = cell.report(truth)
                rows.append(ResultRow(setup.pair_id, method, stop, m[0], m[1], m[2], truth, est,
                                      seconds=time.perf_counter() - start))
            if stop in refits:
                cell.refit(rng)
    except (ClickLabError, FloatingPointError) as exc:
        log.warning("pair %d, %s failed: %s", setup.pair_id, method, exc)
        return [ResultRow(setup.pair_id, method, 0, true_delta=truth,
                          error=f"{type(exc).__name__}: {exc}", seconds=time.perf_counter() - start)]
    return rows


def run_pair(setup, config: ExperimentConfig, pair_id: int = None) -> list:
    if isinstance(setup, Exception):
        return [ResultRow(pair_id, m, 0, error=f"{type(setup).__name__}: {setup}")
                for m in config.methods]
    truth = setup.true_delta
    rows = []
    for method in config.methods:
        rows += run_cell(setup, method, config, truth)
    return rows


def _pair_job(args):
    config, data, i = args
    return run_pair(build_pair(config, data, i), config, i)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list:
    """Rows for every pair, in pair-index order regardless of ``threads``."""
    data = load_dataset(config)
    if threads <= 1:
        setups = build_pairs(config, data)
        return [row for i, s in enumerate(setups) for row in run_pair(s, config, i)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunks = pool.map(_pair_job, [(config, data, i) for i in range(config.pairs)])
        return [row for chunk in chunks for row in chunk]


# -------------------------------------------------------------- output

def write_results(rows: Sequence[ResultRow], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())


def write_timings(rows: Sequence[ResultRow], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("pair_id", "method", "queries", "wall_clock_seconds"))
    for r in rows:
        w.writerow((r.pair_id, r.method, r.queries, f"{r.seconds:.6g}"))


def read_results(stream) -> list:
    rows = []
    for rec in csv.DictReader(stream):
        def num(key):
            return float(rec[key]) if rec.get(key) not in (None, "") else math.nan
        rows.append(ResultRow(int(rec["pair_id"]), rec["method"], int(rec["queries"]),
                              num("binary_error"), num("absolute_error"), num("mse"),
                              num("true_delta"), num("delta_hat"), rec.get("error", "") or ""))
    return rows


DELTA_BINS = ((0.0, 0.01, "<0.01"), (0.01, 0.02, "0.01-0.02"), (0.02, math.inf, ">=0.02"))


@dataclass
class Summary:
    table: list = field(default_factory=list)   # (method, queries, pairs, errors, bin, abs, mse)
    bins: list = field(default_factory=list)    # (method, queries, bin label, pairs, mean binary)


def summarize(rows: Sequence[ResultRow]) -> Summary:
    rows = list(rows)
    if not rows:
        raise InvalidInputError("nothing to summarize")
    errors = {}
    groups = {}
    for r in rows:
        if r.error:
            errors[r.method] = errors.get(r.method, 0) + 1
            continue
        groups.setdefault((r.method, r.queries), []).append(r)
    out = Summary()
    methods = list(dict.fromkeys(r.method for r in rows))
    for method in methods:
        keys = sorted(q for m, q in groups if m == method)
        if not keys:
            out.table.append((method, 0, 0, errors.get(method, 0), math.nan, math.nan, math.nan))
        for q in keys:
            g = groups[(method, q)]
            out.table.append((method, q, len(g), errors.get(method, 0),
                              float(np.mean([r.binary_error for r in g])),
                              float(np.mean([r.absolute_error for r in g])),
                              float(np.mean([r.mse for r in g]))))
            for lo, hi, label in DELTA_BINS:
                sel = [r for r in g if lo <= abs(r.true_delta) < hi]
                mean = float(np.mean([r.binary_error for r in sel])) if sel else math.nan
                out.bins.append((method, q, label, len(sel), mean))
    return out


def write_summary(summary: Summary, stream, bins_stream=None) -> None:
    def fmt(v):
        return "" if isinstance(v, float) and math.isnan(v) else (f"{v:.6g}" if isinstance(v, float) else str(v))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("method", "queries", "pairs", "error_rows", "mean_binary_error",
                "mean_absolute_error", "mean_mse"))
    for row in summary.table:
        w.writerow([fmt(v) for v in row])
    if bins_stream is not None:
        w = csv.writer(bins_stream, lineterminator="\n")
        w.writerow(("method", "queries", "abs_delta_bin", "pairs", "mean_binary_error"))
        for row in summary.bins:
            w.writerow([fmt(v) for v in row])


def plot_curves(summary: Summary, path: str) -> bool:
    """Line plots of the three metrics against queries; False if matplotlib is missing."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return False
    matplotlib.rcParams["svg.hashsalt"] = "clicklab"
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    names = ("binary error", "absolute error", "mean squared error")
    methods = list(dict.fromkeys(r[0] for r in summary.table))
    for col, (ax, name) in enumerate(zip(axes, names)):
        for m in methods:
            pts = [(r[1], r[4 + col]) for r in summary.table if r[0] == m and r[1] > 0]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=m)
        ax.set_xscale("log")
        ax.set_xlabel("queries")
        ax.set_title(name)
        if col > 0:
            ax.set_yscale("log")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True


def write_pairs(setups, stream) -> None:
    """Per pair: true Delta and the exact long-run team-draft outcome."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("pair_id", "true_delta", "tdi_expected_outcome", "error"))
    for i, s in enumerate(setups):
        if isinstance(s, Exception):
            w.writerow((i, "", "", f"{type(s).__name__}: {s}"))
            continue
        try:
            w.writerow((i, f"{s.true_delta:.6g}", f"{s.tdi_expected():.6g}", ""))
        except ClickLabError as exc:
            w.writerow((i, f"{s.true_delta:.6g}", "", f"{type(exc).__name__}: {exc}"))
