"""Exact computations on tabular MDPs and the sampled ESS drift check.

Visitation vectors are unnormalized: d(s) = sum_t gamma^t P(s_t = s), whose
total mass is 1 / (1 - gamma).
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from p3o.core.envs import TabularMDP
from p3o.core.errors import InputError, NumericError
from p3o.core.methods import spawn_rngs
from p3o.core.policy import GaussianDistribution, log_prob
from p3o.core.weighting import ess, is_ratios
from p3o.models.records import EssDriftRow, Lemma1Row

logger = logging.getLogger(__name__)

LEMMA1_TOLERANCE = 1e-9
LEMMA1_GAMMAS = (0.8, 0.9, 0.95)


@dataclass(frozen=True)
class Lemma1Result:
    lhs: float
    rhs: float
    holds: bool
    rhs_reversed: float  # same bound with KL(pi || beta) under the root; recorded only


def _check_policy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)

    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"policy must have shape {(mdp.n_states, mdp.n_actions)}, got {policy.shape}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-10):
        raise InputError("policy rows must be probability vectors")

    return policy


def state_transition_matrix(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']."""
    return np.einsum("sa,sat->st", _check_policy(mdp, policy), mdp.transitions)


def discounted_visitation(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Solve d = d0 + gamma * P_pi^T d."""
    p_pi = state_transition_matrix(mdp, policy)
    system = np.eye(mdp.n_states) - mdp.gamma * p_pi.T

    try:
        return np.linalg.solve(system, mdp.initial)
    except np.linalg.LinAlgError as error:
        raise NumericError(f"visitation system is singular: {error}") from error


def truncated_visitation(mdp: TabularMDP, policy: np.ndarray, terms: int = 1000) -> np.ndarray:
    p_pi = state_transition_matrix(mdp, policy)
    marginal = mdp.initial.copy()
    total = np.zeros(mdp.n_states)
    weight = 1.0

    for _ in range(terms):
        total += weight * marginal
        marginal = p_pi.T @ marginal
        weight *= mdp.gamma

    return total


def _state_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)

    return np.maximum(terms.sum(axis=1), 0.0)


def lemma1_check(mdp: TabularMDP, target: np.ndarray, behavior: np.ndarray) -> Lemma1Result:
    """Compare ||d^pi - d^beta||_1 with 2 gamma / (1 - gamma)^2 * sqrt(max_s KL(beta || pi))."""
    target = _check_policy(mdp, target)
    behavior = _check_policy(mdp, behavior)

    lhs = float(np.abs(discounted_visitation(mdp, target) - discounted_visitation(mdp, behavior)).sum())
    scale = 2.0 * mdp.gamma / (1.0 - mdp.gamma) ** 2
    rhs = scale * float(np.sqrt(_state_kl(behavior, target).max()))
    rhs_reversed = scale * float(np.sqrt(_state_kl(target, behavior).max()))

    return Lemma1Result(lhs=lhs, rhs=rhs, holds=lhs <= rhs + LEMMA1_TOLERANCE, rhs_reversed=rhs_reversed)


def policy_values(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Discounted state values of a fixed policy."""
    p_pi = state_transition_matrix(mdp, policy)
    r_pi = np.sum(policy * mdp.rewards, axis=1)

    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def value_iteration(mdp: TabularMDP, tolerance: float = 1e-12, max_iterations: int = 100_000) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal discounted values and a deterministic greedy policy."""
    values = np.zeros(mdp.n_states)

    for _ in range(max_iterations):
        q = mdp.rewards + mdp.gamma * mdp.transitions @ values
        updated = q.max(axis=1)
        converged = np.max(np.abs(updated - values)) < tolerance
        values = updated
        if converged:
            break

    greedy = np.eye(mdp.n_actions)[np.argmax(mdp.rewards + mdp.gamma * mdp.transitions @ values, axis=1)]

    return values, greedy


def optimal_episode_return(mdp: TabularMDP, horizon: int) -> Tuple[float, np.ndarray]:
    """Best expected undiscounted return over ``horizon`` steps and a first-step greedy policy."""
    values = np.zeros(mdp.n_states)
    q = mdp.rewards.copy()

    for _ in range(horizon):
        q = mdp.rewards + mdp.transitions @ values
        values = q.max(axis=1)

    return float(mdp.initial @ values), np.eye(mdp.n_actions)[np.argmax(q, axis=1)]


def policy_episode_return(mdp: TabularMDP, policy: np.ndarray, horizon: int) -> float:
    """Expected undiscounted return of a stationary policy truncated at ``horizon``."""
    policy = _check_policy(mdp, policy)
    p_pi = state_transition_matrix(mdp, policy)
    r_pi = np.sum(policy * mdp.rewards, axis=1)
    values = np.zeros(mdp.n_states)

    for _ in range(horizon):
        values = r_pi + p_pi @ values

    return float(mdp.initial @ values)


def random_tabular_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float) -> TabularMDP:
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    transitions /= transitions.sum(axis=2, keepdims=True)
    initial = rng.dirichlet(np.ones(n_states))
    initial /= initial.sum()

    return TabularMDP(
        transitions=transitions,
        rewards=rng.uniform(-1.0, 1.0, size=(n_states, n_actions)),
        initial=initial,
        gamma=gamma,
    )


def random_softmax_policy(rng: np.random.Generator, n_states: int, n_actions: int, scale: float = 1.0) -> np.ndarray:
    logits = scale * rng.standard_normal((n_states, n_actions))
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)

    return probs / probs.sum(axis=1, keepdims=True)


def lemma1_sweep(trials: int, seed: int = 0) -> List[Lemma1Row]:
    """Random MDPs (2-10 states, 2-4 actions) with random softmax policy pairs."""
    rows = []

    for trial, rng in enumerate(spawn_rngs(seed, trials)):
        gamma = LEMMA1_GAMMAS[trial % len(LEMMA1_GAMMAS)]
        n_states = int(rng.integers(2, 11))
        n_actions = int(rng.integers(2, 5))
        mdp = random_tabular_mdp(rng, n_states, n_actions, gamma)
        scale = float(rng.uniform(0.1, 3.0))
        result = lemma1_check(
            mdp,
            random_softmax_policy(rng, n_states, n_actions, scale),
            random_softmax_policy(rng, n_states, n_actions, scale),
        )

        if not result.holds:
            logger.error("lemma bound violated on trial %d: lhs %.6g > rhs %.6g", trial, result.lhs, result.rhs)

        rows.append(
            Lemma1Row(
                seed=seed + trial,
                gamma=gamma,
                lhs=result.lhs,
                rhs=result.rhs,
                holds=result.holds,
                rhs_reversed=result.rhs_reversed,
            )
        )

    return rows


ESS_DRIFT_SEPARATIONS = (0.0, 0.5, 1.0, 2.0)


def ess_drift_sweep(
    separations=ESS_DRIFT_SEPARATIONS, seeds: int = 20, samples: int = 10_000, seed: int = 0, dim: int = 1
) -> List[EssDriftRow]:
    """Median batch ESS of N(d, 1) against samples from N(0, 1), per mean separation d.

    Each seed reuses one behavior sample across all separations.
    """
    if seeds < 1 or samples < 1:
        raise InputError("ESS drift needs at least one seed and one sample")

    behavior = GaussianDistribution(mean=np.zeros(dim), std=np.ones(dim))
    draws = [rng.standard_normal((samples, dim)) for rng in spawn_rngs(seed, seeds)]
    rows = []

    for separation in separations:
        target = GaussianDistribution(mean=np.full(dim, separation), std=np.ones(dim))
        values = [ess(is_ratios(log_prob(target, x), log_prob(behavior, x))) for x in draws]
        rows.append(EssDriftRow(separation=separation, median_ess=float(np.median(values))))

    return rows


def is_non_increasing(values: Sequence[float]) -> bool:
    return all(later <= earlier for earlier, later in zip(values, values[1:]))
