"""Stochastic policies: categorical and diagonal-Gaussian heads on top of an MLP.

Distributions are vectorised over leading axes, so the same functions serve a
single state (``probs`` of shape ``(A,)``) and a batch (``(B, A)``).
Gaussian policies keep a state-independent log standard deviation appended to
the network parameters.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from p3o.core.errors import InputError, NumericError
from p3o.core.numcore import MlpSpec, ParamVector, init_params, mlp_backward, mlp_forward
from p3o.models.enums import ActionSpace, Activation, KlDirection

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
SNAPSHOT_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class CategoricalDistribution:
    """Action probabilities, optionally with the log-softmax they were computed from.

    ``log_table`` stays finite where a probability underflows to 0.
    """
    probs: np.ndarray
    log_table: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)

        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise NumericError("categorical probabilities must be finite and nonnegative")
        if np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-10):
            raise NumericError("categorical probabilities must sum to 1")

        if self.log_table is not None:
            table = np.asarray(self.log_table, dtype=np.float64)
            object.__setattr__(self, "log_table", table)

            if table.shape != probs.shape:
                raise InputError(f"log table shape {table.shape} does not match {probs.shape}")
            if not np.all(np.isfinite(table)):
                raise NumericError("categorical log-probabilities must be finite")

    @classmethod
    def from_logits(cls, logits) -> "CategoricalDistribution":
        table = _log_softmax(np.asarray(logits, dtype=np.float64))

        return cls(np.exp(table), table)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[-1]

    @property
    def log_probs(self) -> np.ndarray:
        if self.log_table is not None:
            return self.log_table

        with np.errstate(divide="ignore"):
            return np.log(self.probs)


@dataclass(frozen=True)
class GaussianDistribution:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", np.broadcast_to(std, mean.shape).copy())

        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(self.std))):
            raise NumericError("Gaussian parameters must be finite")
        if np.any(self.std <= 0):
            raise NumericError("Gaussian standard deviations must be strictly positive")

    @property
    def action_dim(self) -> int:
        return self.mean.shape[-1]


ActionDistribution = Union[CategoricalDistribution, GaussianDistribution]


@dataclass(frozen=True)
class PolicySnapshot:
    """Behavior distribution recorded at collection time plus the log-probability of the taken action."""
    distribution: ActionDistribution
    log_prob: float

    @classmethod
    def record(cls, distribution: ActionDistribution, action) -> "PolicySnapshot":
        return cls(distribution=distribution, log_prob=float(log_prob(distribution, action)))

    def matches(self, action, tolerance: float = 1e-9) -> bool:
        return abs(float(log_prob(self.distribution, action)) - self.log_prob) <= tolerance


class PolicySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    action_space: ActionSpace
    observation_dim: int = Field(gt=0)
    action_dim: int = Field(gt=0, description="Number of actions (discrete) or action dimensions")
    hidden_sizes: List[int] = Field(default_factory=list)
    activation: Activation = Activation.TANH

    @property
    def mlp(self) -> MlpSpec:
        return MlpSpec(
            layer_sizes=[self.observation_dim, *self.hidden_sizes, self.action_dim],
            activations=[self.activation] * len(self.hidden_sizes),
        )

    @property
    def discrete(self) -> bool:
        return self.action_space == ActionSpace.DISCRETE

    @property
    def param_count(self) -> int:
        extra = 0 if self.discrete else self.action_dim
        return self.mlp.param_count + extra


def init_policy_params(spec: PolicySpec, rng: np.random.Generator) -> ParamVector:
    """Near-uniform (or unit-variance) initial policy: output gain 0.01, log-std 0."""
    network = init_params(spec.mlp, rng, hidden_gain=1.0, output_gain=0.01)

    if spec.discrete:
        return network

    return np.concatenate([network, np.zeros(spec.action_dim)])


def _split(spec: PolicySpec, params: ParamVector):
    if params.shape != (spec.param_count,):
        raise InputError(f"expected {spec.param_count} policy parameters, got {params.shape}")

    count = spec.mlp.param_count

    return params[:count], params[count:]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)

    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def head_output(spec: PolicySpec, params: ParamVector, states) -> np.ndarray:
    """Raw network output: logits (discrete) or action means (continuous)."""
    network, _ = _split(spec, params)
    output = mlp_forward(spec.mlp, network, states)

    if not np.all(np.isfinite(output)):
        raise NumericError("policy network produced non-finite output")

    return output


def policy_distribution(spec: PolicySpec, params: ParamVector, states) -> ActionDistribution:
    output = head_output(spec, params, states)

    if spec.discrete:
        return CategoricalDistribution.from_logits(output)

    _, log_std = _split(spec, params)
    std = np.broadcast_to(np.exp(log_std), output.shape)

    return GaussianDistribution(mean=output, std=std)


def log_prob(dist: ActionDistribution, action):
    if isinstance(dist, CategoricalDistribution):
        index = np.asarray(action)

        if not np.issubdtype(index.dtype, np.integer):
            raise InputError(f"discrete action must be an integer index, got {action!r}")
        if np.any(index < 0) or np.any(index >= dist.n_actions):
            raise InputError(f"action {action!r} outside [0, {dist.n_actions})")

        values = np.take_along_axis(dist.log_probs, index[..., None], axis=-1)[..., 0]
        return float(values) if values.ndim == 0 else values

    z = (np.asarray(action, dtype=np.float64) - dist.mean) / dist.std
    values = np.sum(-0.5 * z * z - np.log(dist.std) - 0.5 * LOG_2PI, axis=-1)

    return float(values) if values.ndim == 0 else values


def entropy(dist: ActionDistribution):
    if isinstance(dist, CategoricalDistribution):
        with np.errstate(invalid="ignore"):
            terms = np.where(dist.probs > 0, dist.probs * dist.log_probs, 0.0)
        values = -terms.sum(axis=-1)
    else:
        values = np.sum(0.5 * (LOG_2PI + 1.0) + np.log(dist.std), axis=-1)

    return float(values) if np.ndim(values) == 0 else values


def kl_exact(p: ActionDistribution, q: ActionDistribution):
    """KL(p || q), summed exactly over actions or in closed form for Gaussians."""
    if type(p) is not type(q):
        raise InputError("KL requires two distributions over the same action space")

    if isinstance(p, CategoricalDistribution):
        if p.n_actions != q.n_actions:
            raise InputError("KL requires the same number of actions")
        if np.any((p.probs > 0) & np.isneginf(q.log_probs)):
            raise NumericError("KL support violation: q is zero where p is positive")

        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p.probs > 0, p.probs * (p.log_probs - q.log_probs), 0.0)
        values = terms.sum(axis=-1)
    else:
        variance_ratio = (p.std / q.std) ** 2
        mean_term = ((p.mean - q.mean) / q.std) ** 2
        values = 0.5 * np.sum(variance_ratio + mean_term - 1.0 - np.log(variance_ratio), axis=-1)

    values = np.maximum(values, 0.0)

    return float(values) if np.ndim(values) == 0 else values


def sample(dist: ActionDistribution, rng: np.random.Generator):
    if isinstance(dist, CategoricalDistribution):
        if dist.probs.ndim != 1:
            raise InputError("sample expects a single-state distribution")

        cumulative = np.cumsum(dist.probs)
        index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))

        return min(index, dist.n_actions - 1)

    return dist.mean + dist.std * rng.standard_normal(dist.mean.shape)


def stack_distributions(dists: Sequence[ActionDistribution]) -> ActionDistribution:
    if isinstance(dists[0], CategoricalDistribution):
        tables = [d.log_table for d in dists]
        table = None if any(t is None for t in tables) else np.stack(tables)

        return CategoricalDistribution(np.stack([d.probs for d in dists]), table)

    return GaussianDistribution(
        mean=np.stack([d.mean for d in dists]),
        std=np.stack([d.std for d in dists]),
    )


def index_distribution(dist: ActionDistribution, index: int) -> ActionDistribution:
    """Single-state distribution at row ``index`` of a batched one."""
    if isinstance(dist, CategoricalDistribution):
        table = None if dist.log_table is None else dist.log_table[index].copy()

        return CategoricalDistribution(dist.probs[index].copy(), table)

    return GaussianDistribution(mean=dist.mean[index].copy(), std=dist.std[index].copy())


def floor_snapshot(dist: ActionDistribution) -> ActionDistribution:
    """Apply the probability floor to a distribution read back from disk."""
    if isinstance(dist, GaussianDistribution):
        return dist

    if dist.probs.min() >= SNAPSHOT_PROB_FLOOR:
        return dist

    floored = np.maximum(dist.probs, SNAPSHOT_PROB_FLOOR)

    return CategoricalDistribution(floored / floored.sum(axis=-1, keepdims=True))


# Batched parameter gradients. Each helper returns sum_i w_i * grad(quantity_i)
# for per-transition weights w_i; callers divide by the batch size.

def _assemble(spec, params, states, head_grad, log_std_grad=None) -> ParamVector:
    network, _ = _split(spec, params)
    grad = mlp_backward(spec.mlp, network, np.atleast_2d(states), head_grad)

    if spec.discrete:
        return grad

    return np.concatenate([grad, log_std_grad])


def weighted_score_gradient(spec, params, states, actions, weights) -> ParamVector:
    states = np.atleast_2d(states)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    dist = policy_distribution(spec, params, states)

    if spec.discrete:
        index = np.asarray(actions).reshape(-1)
        if np.any(index < 0) or np.any(index >= spec.action_dim):
            raise InputError("discrete action index out of range")

        onehot = np.eye(spec.action_dim)[index]
        return _assemble(spec, params, states, weights[:, None] * (onehot - dist.probs))

    actions = np.asarray(actions, dtype=np.float64).reshape(states.shape[0], spec.action_dim)
    z = (actions - dist.mean) / dist.std
    head_grad = weights[:, None] * z / dist.std
    log_std_grad = np.sum(weights[:, None] * (z * z - 1.0), axis=0)

    return _assemble(spec, params, states, head_grad, log_std_grad)


def weighted_entropy_gradient(spec, params, states, weights) -> ParamVector:
    states = np.atleast_2d(states)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    dist = policy_distribution(spec, params, states)

    if spec.discrete:
        log_p = _log_softmax(head_output(spec, params, states))
        h = -np.sum(dist.probs * log_p, axis=-1, keepdims=True)
        return _assemble(spec, params, states, -weights[:, None] * dist.probs * (log_p + h))

    head_grad = np.zeros((states.shape[0], spec.action_dim))
    log_std_grad = np.full(spec.action_dim, weights.sum())

    return _assemble(spec, params, states, head_grad, log_std_grad)


def weighted_kl_gradient(
    spec, params, states, behavior: ActionDistribution, weights,
    direction: KlDirection = KlDirection.BEHAVIOR_TARGET,
) -> ParamVector:
    states = np.atleast_2d(states)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    dist = policy_distribution(spec, params, states)

    if spec.discrete != isinstance(behavior, CategoricalDistribution):
        raise InputError("behavior distribution does not match the policy's action space")

    if spec.discrete:
        beta = np.atleast_2d(behavior.probs)
        if beta.shape != dist.probs.shape:
            raise InputError(f"behavior shape {beta.shape} does not match {dist.probs.shape}")

        if direction == KlDirection.BEHAVIOR_TARGET:
            head_grad = dist.probs - beta
        else:
            if np.any(beta <= 0):
                raise NumericError("KL support violation: behavior has zero probability")
            gap = _log_softmax(head_output(spec, params, states)) - np.log(beta)
            head_grad = dist.probs * (gap - np.sum(dist.probs * gap, axis=-1, keepdims=True))

        return _assemble(spec, params, states, weights[:, None] * head_grad)

    beta_mean = np.atleast_2d(behavior.mean)
    beta_std = np.atleast_2d(behavior.std)
    variance = dist.std ** 2

    if direction == KlDirection.BEHAVIOR_TARGET:
        head_grad = (dist.mean - beta_mean) / variance
        log_std_grad = 1.0 - (beta_std ** 2 + (beta_mean - dist.mean) ** 2) / variance
    else:
        head_grad = (dist.mean - beta_mean) / beta_std ** 2
        log_std_grad = variance / beta_std ** 2 - 1.0

    return _assemble(
        spec, params, states,
        weights[:, None] * head_grad,
        np.sum(weights[:, None] * log_std_grad, axis=0),
    )


def grad_log_prob(spec: PolicySpec, params: ParamVector, state, action) -> ParamVector:
    return weighted_score_gradient(spec, params, state, [action] if spec.discrete else action, [1.0])


def grad_entropy(spec: PolicySpec, params: ParamVector, state) -> ParamVector:
    return weighted_entropy_gradient(spec, params, state, [1.0])


def grad_kl(
    spec: PolicySpec, params: ParamVector, state, behavior: ActionDistribution,
    direction: KlDirection = KlDirection.BEHAVIOR_TARGET,
) -> ParamVector:
    """Gradient of KL(behavior || pi_theta(.|s)) (or the reversed ordering) without any coefficient."""
    return weighted_kl_gradient(spec, params, state, behavior, [1.0], direction)


class ParametricPolicy:
    def __init__(self, spec: PolicySpec, params: ParamVector):
        self.spec = spec
        self.params = params

    def distribution(self, observation) -> ActionDistribution:
        return policy_distribution(self.spec, self.params, observation)


class TabularPolicy:
    """Explicit per-state action probabilities indexed by a one-hot observation."""

    def __init__(self, probs: np.ndarray):
        self.probs = np.asarray(probs, dtype=np.float64)
        CategoricalDistribution(self.probs)

    def distribution(self, observation) -> CategoricalDistribution:
        return CategoricalDistribution(self.probs[int(np.argmax(observation))])
