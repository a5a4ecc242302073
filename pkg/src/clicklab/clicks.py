"""Position-based click simulation and exact click-pattern probabilities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ClickModel, Query
from .errors import InvalidInputError


@dataclass(frozen=True)
class SimulationConfig:
    display_length: int = 10
    bias_exponent: float = 1.0
    zeta_slope: float = 0.225
    zeta_intercept: float = 0.1

    def __post_init__(self):
        if self.display_length < 1:
            raise InvalidInputError("display_length must be >= 1")
        if self.bias_exponent < 0:
            raise InvalidInputError("bias_exponent must be >= 0 so that theta stays in [0, 1]")


def rank_bias(display_length: int, exponent: float = 1.0) -> np.ndarray:
    return np.arange(1, display_length + 1, dtype=float) ** (-exponent)


def build_click_model(queries: Sequence[Query], config: SimulationConfig) -> ClickModel:
    """theta_r = r**-exponent up to the display length; zeta = slope * label + intercept.

    ``queries`` is any iterable of queries (a Dataset's ``queries``).  Relevances
    outside [0, 1] are clamped and the result's ``clamped`` flag is set.
    """
    theta = rank_bias(config.display_length, config.bias_exponent)
    zeta, clamped = {}, False
    for q in getattr(queries, "queries", queries):
        raw = config.zeta_slope * q.labels + config.zeta_intercept
        clamped |= bool(np.any(raw > 1.0) or np.any(raw < 0.0))
        zeta[q.qid] = np.clip(raw, 0.0, 1.0)
    return ClickModel(theta, zeta, clamped=clamped)


def sample_clicks(ranking: Sequence[int], query: Query, model: ClickModel,
                  rng: np.random.Generator) -> tuple:
    probs = model.click_probs(ranking, query)
    return tuple(int(c) for c in rng.random(len(probs)) < probs)


def click_pattern_prob(pattern: Sequence[int], ranking: Sequence[int], query: Query,
                       model: ClickModel) -> float:
    probs = model.click_probs(ranking, query)
    pattern = np.asarray(pattern, dtype=bool)
    if pattern.shape != probs.shape:
        raise InvalidInputError("pattern length must match ranking length")
    return float(np.prod(np.where(pattern, probs, 1.0 - probs)))


def all_patterns(length: int) -> np.ndarray:
    """Every 0/1 click pattern of ``length`` positions, shape (2**length, length)."""
    return np.array(list(itertools.product((0, 1), repeat=length)), dtype=int).reshape(2 ** length, length)
