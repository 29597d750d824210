"""Returns, TD residuals, GAE and the value-function regression.

Episode boundaries inside a segment cut every backward recursion: a step
flagged in ``boundaries`` contributes nothing from the steps after it.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from p3o.core.errors import InputError
from p3o.core.methods import check_finite, check_same_length, check_unit_interval
from p3o.core.numcore import MlpSpec, ParamVector, mlp_backward, mlp_forward

logger = logging.getLogger(__name__)

NORMALIZE_MIN_STD = 1e-8


@dataclass(frozen=True)
class ValueEstimate:
    """Per-step predictions v(s_t); ``bootstrap`` is 0 after a true terminal."""
    values: np.ndarray
    bootstrap: float = 0.0

    def next_values(self) -> np.ndarray:
        return np.append(self.values[1:], self.bootstrap)


@dataclass(frozen=True)
class AdvantageSet:
    advantages: np.ndarray
    targets: np.ndarray


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1)


def _boundary_mask(boundaries, length: int) -> np.ndarray:
    if boundaries is None:
        return np.zeros(length, dtype=bool)

    mask = np.asarray(boundaries, dtype=bool).reshape(-1)
    check_same_length("boundaries", mask, "rewards", range(length))

    return mask


def discounted_returns(
    rewards: Sequence[float], gamma: float, bootstrap: float = 0.0, boundaries=None
) -> np.ndarray:
    """G_t = r_t + gamma * G_{t+1}, with G_T seeded by ``bootstrap``."""
    check_unit_interval(gamma, "gamma", closed_right=False)
    rewards = _as_array(rewards)
    cut = _boundary_mask(boundaries, rewards.shape[0])
    returns = np.zeros_like(rewards)
    running = bootstrap

    for t in reversed(range(rewards.shape[0])):
        if cut[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        returns[t] = running

    return returns


def td_residuals(
    rewards: Sequence[float],
    values: ValueEstimate,
    gamma: float,
    terminals=None,
    next_values: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """delta_t = r_t + gamma * v(s_{t+1}) - v(s_t); terminal steps bootstrap with 0.

    ``next_values`` overrides the shifted ``values`` when a segment spans resets.
    """
    rewards = _as_array(rewards)
    current = _as_array(values.values)
    check_same_length("rewards", rewards, "values", current)

    upcoming = values.next_values() if next_values is None else _as_array(next_values)
    check_same_length("rewards", rewards, "next values", upcoming)

    terminal = _boundary_mask(terminals, rewards.shape[0])
    upcoming = np.where(terminal, 0.0, upcoming)

    return rewards + gamma * upcoming - current


def gae(deltas: Sequence[float], gamma: float, tau: float, boundaries=None) -> np.ndarray:
    """A_t = sum_l (gamma * tau)^l delta_{t+l}, computed backwards."""
    check_unit_interval(tau, "tau")
    deltas = _as_array(deltas)
    cut = _boundary_mask(boundaries, deltas.shape[0])
    advantages = np.zeros_like(deltas)
    running = 0.0

    for t in reversed(range(deltas.shape[0])):
        if cut[t]:
            running = 0.0
        running = deltas[t] + gamma * tau * running
        advantages[t] = running

    return advantages


def value_predictions(spec: MlpSpec, params: ParamVector, states) -> np.ndarray:
    return mlp_forward(spec, params, np.atleast_2d(states))[:, 0]


def value_loss_and_grad(
    spec: MlpSpec, params: ParamVector, states, targets
) -> Tuple[float, ParamVector]:
    """Loss 0.5 * mean((v - target)^2) and its exact parameter gradient."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = _as_array(targets)
    check_same_length("states", states, "targets", targets)
    check_finite(targets, "value targets", InputError)

    residual = value_predictions(spec, params, states) - targets
    loss = 0.5 * float(np.mean(residual ** 2))
    grad = mlp_backward(spec, params, states, (residual / residual.shape[0])[:, None])

    return loss, grad


def normalize_advantages(adv: Sequence[float]) -> np.ndarray:
    """Zero mean and unit population std; only centred when the std is below 1e-8."""
    adv = _as_array(adv)

    if adv.size == 0:
        raise InputError("cannot normalize an empty advantage batch")

    centred = adv - adv.mean()
    std = adv.std()

    return centred if std < NORMALIZE_MIN_STD else centred / std


def segment_advantages(
    spec: MlpSpec,
    params: ParamVector,
    states,
    rewards,
    next_states,
    terminals,
    truncateds,
    gamma: float,
    tau: float,
) -> AdvantageSet:
    """GAE over one stored segment using the given value function.

    Steps after a terminal or a horizon truncation start a new episode, so both
    cut the recursion; only a true terminal zeroes the bootstrap value.
    """
    values = value_predictions(spec, params, states)
    next_values = value_predictions(spec, params, next_states)
    deltas = td_residuals(rewards, ValueEstimate(values), gamma, terminals, next_values)
    boundaries = np.asarray(terminals, dtype=bool) | np.asarray(truncateds, dtype=bool)
    advantages = gae(deltas, gamma, tau, boundaries)

    return AdvantageSet(advantages=advantages, targets=advantages + values)
