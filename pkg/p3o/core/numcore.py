"""Flat parameter vectors, a small multilayer perceptron and the shared optimizer.

Parameters of a network live in one contiguous float64 vector. For every
layer the weight matrix (out x in, row-major) is followed by its bias, so a
single linear layer ``W=[[2]], b=[1]`` is the vector ``[2, 1]``.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Iterator, List, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from p3o.core.errors import ConfigurationError, InputError, NumericError
from p3o.models.enums import Activation

logger = logging.getLogger(__name__)

ParamVector = npt.NDArray[np.float64]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def as_param_vector(values) -> ParamVector:
    """Copy ``values`` into a finite one-dimensional float64 vector."""
    vector = np.array(values, dtype=np.float64).reshape(-1)

    if not np.all(np.isfinite(vector)):
        raise NumericError("parameter vector contains non-finite entries")

    return vector


class MlpSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer_sizes: List[int] = Field(min_length=2)
    activations: List[Activation] = Field(default_factory=list)
    output_activation: Activation = Activation.LINEAR

    @model_validator(mode="before")
    @classmethod
    def default_activations(cls, data):
        if isinstance(data, dict) and not data.get("activations") and data.get("layer_sizes"):
            hidden = max(len(data["layer_sizes"]) - 2, 0)
            data = {**data, "activations": [Activation.TANH] * hidden}

        return data

    @model_validator(mode="after")
    def check_layers(self) -> "MlpSpec":
        if any(size <= 0 for size in self.layer_sizes):
            raise ValueError("layer sizes must be positive")

        hidden = len(self.layer_sizes) - 2

        if len(self.activations) != hidden:
            raise ValueError(f"expected {hidden} hidden activations, got {len(self.activations)}")

        return self

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum(
            n_out * n_in + n_out
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )

    def layer_activations(self) -> List[Activation]:
        return [*self.activations, self.output_activation]


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return np.tanh(z)
    if kind == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_slope(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return 1.0 - a * a
    if kind == Activation.RELU:
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _layers(spec: MlpSpec, params: ParamVector) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    offset = 0

    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        weights = params[offset:offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        bias = params[offset:offset + n_out]
        offset += n_out
        yield weights, bias


def _check_shapes(spec: MlpSpec, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise ConfigurationError(
            f"expected {spec.param_count} parameters, got {params.shape}"
        )

    batch = np.atleast_2d(np.asarray(inputs, dtype=np.float64))

    if batch.ndim != 2 or batch.shape[1] != spec.input_size:
        raise ConfigurationError(
            f"expected input of size {spec.input_size}, got shape {np.shape(inputs)}"
        )

    return batch


def _forward_trace(spec: MlpSpec, params: ParamVector, batch: np.ndarray):
    activations = [batch]
    pre_activations = []

    for (weights, bias), kind in zip(_layers(spec, params), spec.layer_activations()):
        z = activations[-1] @ weights.T + bias
        pre_activations.append(z)
        activations.append(_activate(kind, z))

    return pre_activations, activations


def mlp_forward(spec: MlpSpec, params: ParamVector, inputs) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, input) matrix."""
    batch = _check_shapes(spec, params, inputs)
    _, activations = _forward_trace(spec, params, batch)
    output = activations[-1]

    return output[0] if np.ndim(inputs) == 1 else output


def mlp_backward(spec: MlpSpec, params: ParamVector, inputs, output_grad) -> ParamVector:
    """Gradient of ``sum(output_grad * output)`` with respect to the parameters.

    Batched inputs accumulate the gradient over the batch.
    """
    batch = _check_shapes(spec, params, inputs)
    delta = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))

    if delta.shape != (batch.shape[0], spec.output_size):
        raise ConfigurationError(
            f"output gradient shape {np.shape(output_grad)} does not match output "
            f"({batch.shape[0]}, {spec.output_size})"
        )

    pre_activations, activations = _forward_trace(spec, params, batch)
    layers = list(_layers(spec, params))
    kinds = spec.layer_activations()
    grads = []

    for index in reversed(range(len(layers))):
        weights, _ = layers[index]
        delta = delta * _activation_slope(kinds[index], pre_activations[index], activations[index + 1])
        grads.append((delta.T @ activations[index], delta.sum(axis=0)))
        delta = delta @ weights

    flat = []
    for grad_w, grad_b in reversed(grads):
        flat.append(grad_w.reshape(-1))
        flat.append(grad_b)

    return np.concatenate(flat)


def init_params(
    spec: MlpSpec,
    rng: np.random.Generator,
    hidden_gain: float = 1.0,
    output_gain: float = 1.0,
) -> ParamVector:
    """Orthogonal weights scaled by a per-layer gain, zero biases."""
    chunks = []
    n_layers = len(spec.layer_sizes) - 1

    for index, (n_in, n_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        gain = output_gain if index == n_layers - 1 else hidden_gain
        gaussian = rng.standard_normal((max(n_out, n_in), min(n_out, n_in)))
        q, r = np.linalg.qr(gaussian)
        q = q * np.sign(np.diag(r))
        weights = q if n_out >= n_in else q.T
        chunks.append(gain * weights[:n_out, :n_in].reshape(-1))
        chunks.append(np.zeros(n_out))

    return np.concatenate(chunks)


@dataclass(frozen=True)
class OptimizerState:
    first_moment: ParamVector
    second_moment: ParamVector
    step_count: int
    learning_rate: float
    clip_norm: float

    @classmethod
    def create(cls, size: int, learning_rate: float, clip_norm: float) -> "OptimizerState":
        if learning_rate <= 0 or clip_norm <= 0:
            raise ConfigurationError("learning rate and clip norm must be positive")

        return cls(
            first_moment=np.zeros(size),
            second_moment=np.zeros(size),
            step_count=0,
            learning_rate=learning_rate,
            clip_norm=clip_norm,
        )


def clip_by_global_norm(grad: ParamVector, clip_norm: float) -> Tuple[ParamVector, float]:
    norm = float(np.linalg.norm(grad))

    if norm > clip_norm:
        return grad * (clip_norm / norm), norm

    return grad, norm


def optimizer_apply(
    state: OptimizerState, params: ParamVector, grad: ParamVector
) -> Tuple[ParamVector, OptimizerState]:
    """One descent step: global-norm clipping, then the moment-based adaptive update.

    Inputs are never modified; on a non-finite gradient nothing is returned.
    """
    if grad.shape != params.shape or params.shape != state.first_moment.shape:
        raise InputError(
            f"gradient {grad.shape}, parameters {params.shape} and optimizer "
            f"{state.first_moment.shape} disagree in length"
        )

    if not np.all(np.isfinite(grad)):
        logger.warning("non-finite gradient rejected at optimizer step %d", state.step_count)
        raise NumericError("non-finite gradient passed to the optimizer")

    clipped, _ = clip_by_global_norm(grad, state.clip_norm)
    step = state.step_count + 1

    first = ADAM_BETA1 * state.first_moment + (1.0 - ADAM_BETA1) * clipped
    second = ADAM_BETA2 * state.second_moment + (1.0 - ADAM_BETA2) * clipped * clipped
    first_hat = first / (1.0 - ADAM_BETA1 ** step)
    second_hat = second / (1.0 - ADAM_BETA2 ** step)

    updated = params - state.learning_rate * first_hat / (np.sqrt(second_hat) + ADAM_EPSILON)

    return updated, replace(state, first_moment=first, second_moment=second, step_count=step)


def numerical_gradient(
    objective: Callable[[ParamVector], float], params: ParamVector, step: float = 1e-6
) -> ParamVector:
    """Central finite differences of a scalar objective."""
    grad = np.zeros_like(params)
    shifted = params.copy()

    for index in range(params.shape[0]):
        original = shifted[index]
        shifted[index] = original + step
        upper = objective(shifted)
        shifted[index] = original - step
        lower = objective(shifted)
        shifted[index] = original
        grad[index] = (upper - lower) / (2.0 * step)

    return grad


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(analytic)) + float(np.linalg.norm(reference)), 1e-8)

    return float(np.linalg.norm(analytic - reference)) / scale
