"""Importance ratios, truncation and the effective-sample-size coefficient rule."""
import logging
import math
from dataclasses import dataclass

import numpy as np

from p3o.core.errors import InputError

logger = logging.getLogger(__name__)

RATIO_CAP = 1e6
LOG_RATIO_FLOOR = -700.0


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    saturated: int = 0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "weights", weights)

        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise InputError("importance weights must be finite and strictly positive")

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class AdaptiveCoefficients:
    lam: float
    c: float
    ess: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InputError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.c > 0.0:
            raise InputError(f"c must be positive, got {self.c}")
        if not 0.0 < self.ess <= 1.0:
            raise InputError(f"ESS must lie in (0, 1], got {self.ess}")


def _log_ratio(target_logprob, behavior_logprob, cap: float):
    return np.clip(
        np.asarray(target_logprob, dtype=np.float64) - np.asarray(behavior_logprob, dtype=np.float64),
        LOG_RATIO_FLOOR,
        math.log(cap),
    )


def _check_log_probs(target_logprob, behavior_logprob):
    """A -inf target is floored like any other tiny one; other non-finite values are rejected."""
    target = np.asarray(target_logprob, dtype=np.float64)

    if not (np.all(np.isfinite(behavior_logprob)) and np.all(np.isfinite(target) | np.isneginf(target))):
        raise InputError("log-probabilities must be finite")


def is_ratio(target_logprob: float, behavior_logprob: float, cap: float = RATIO_CAP) -> float:
    """pi(a|s) / mu(a|s) from log-probabilities, floored above zero and capped at ``cap``."""
    _check_log_probs(target_logprob, behavior_logprob)

    return float(np.exp(_log_ratio(target_logprob, behavior_logprob, cap)))


def is_ratios(target_logprobs, behavior_logprobs, cap: float = RATIO_CAP) -> WeightVector:
    """Vectorised ratios; ``saturated`` counts entries that hit the cap."""
    _check_log_probs(target_logprobs, behavior_logprobs)

    raw = np.asarray(target_logprobs, dtype=np.float64) - np.asarray(behavior_logprobs, dtype=np.float64)
    saturated = int(np.count_nonzero(raw >= math.log(cap)))

    if saturated:
        logger.warning("%d importance ratios saturated at %.0e", saturated, cap)

    return WeightVector(np.exp(_log_ratio(target_logprobs, behavior_logprobs, cap)), saturated)


def clip_ratio(rho, c: float):
    return np.minimum(rho, c)


def ess(weights) -> float:
    """Normalized effective sample size (sum w)^2 / (N sum w^2), in [1/N, 1]."""
    values = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=np.float64)

    if values.size == 0:
        raise InputError("ESS of an empty weight vector is undefined")

    scaled = values / values.max()
    n = scaled.shape[0]
    value = scaled.sum() ** 2 / (n * np.dot(scaled, scaled))

    return float(min(max(value, 1.0 / n), 1.0))


def adaptive_coefficients(weights) -> AdaptiveCoefficients:
    """lambda = 1 - ESS and c = ESS from the same mini-batch."""
    value = ess(weights)

    return AdaptiveCoefficients(lam=1.0 - value, c=value, ess=value)


def fixed_coefficients(weights, lam: float = None, c: float = None) -> AdaptiveCoefficients:
    """Adaptive rule with either coefficient optionally pinned to a constant."""
    adaptive = adaptive_coefficients(weights)

    return AdaptiveCoefficients(
        lam=adaptive.lam if lam is None else lam,
        c=adaptive.c if c is None else c,
        ess=adaptive.ess,
    )


def sampled_kl_telemetry(ratios) -> float:
    """Mean of -log(rho) over the batch, a sampled estimate of KL(beta || pi)."""
    values = ratios.weights if isinstance(ratios, WeightVector) else np.asarray(ratios, dtype=np.float64)

    if values.size == 0:
        raise InputError("sampled KL of an empty batch is undefined")

    return float(np.mean(-np.log(values)))
