"""Split conformal prediction with absolute-error scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if s.size < 1 or not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ConfigurationError("scores must be a nonempty set of finite nonnegative values")
        object.__setattr__(self, "scores", s)

    @property
    def n_c(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    half_width: float
    alpha: float

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")


def nonconformity_scores(predictions, truths) -> ScoreSet:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != y.shape or p.size == 0:
        raise ShapeError(f"predictions {p.shape} and truths {y.shape} must match and be nonempty")
    return ScoreSet(np.abs(y - p))


def quantile_rank(n_c: int, alpha: float) -> int:
    """k = ceil((1 - alpha)(n_c + 1)), computed without float round-off at integers."""
    _check_alpha(alpha)
    if n_c < 1:
        raise ConfigurationError("need at least one calibration score")
    x = (1.0 - alpha) * (n_c + 1)
    k = math.ceil(x)
    if k - x > 1 - 1e-9:      # x is an integer up to rounding error
        k -= 1
    return k


def conformal_quantile(scores: ScoreSet | np.ndarray, alpha: float) -> float:
    """k-th smallest score, or +inf when k exceeds the calibration size."""
    if not isinstance(scores, ScoreSet):
        scores = ScoreSet(scores)
    k = quantile_rank(scores.n_c, alpha)
    if k > scores.n_c:
        return math.inf
    return float(np.sort(scores.scores, kind="stable")[k - 1])


def make_interval(prediction: float, half_width: float, alpha: float) -> PredictionInterval:
    return PredictionInterval(float(prediction), float(half_width), float(alpha))


def theoretical_coverage(n_c: int, alpha: float) -> float:
    return min(1.0, quantile_rank(n_c, alpha) / (n_c + 1))


def covered(interval: PredictionInterval, truth: float) -> bool:
    if math.isinf(interval.half_width):
        return True
    return bool(interval.lower <= truth <= interval.upper)


def covered_many(centers, half_width: float, truths) -> np.ndarray:
    """Vectorized :func:`covered` for a shared half-width."""
    centers = np.asarray(centers, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if math.isinf(half_width):
        return np.ones(truths.shape, dtype=bool)
    return (centers - half_width <= truths) & (truths <= centers + half_width)
