"""The three gradient terms of a P3O update and the iteration that applies them.

Every ``GradientEstimate`` carries the ascent direction of its surrogate
objective. ``combined_update`` hands the negated vector to the optimizer, which
minimizes.

The on-policy term is the baselined score-function gradient plus an entropy
bonus. The off-policy term reweights replayed transitions by min(rho, c), and
the KL term pulls the policy towards the behavior snapshots stored with them.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from p3o.core.advantage import normalize_advantages, segment_advantages, value_loss_and_grad, value_predictions
from p3o.core.errors import InputError, NumericError
from p3o.core.methods import check_finite, check_same_length, check_unit_interval, poisson_draw
from p3o.core.numcore import MlpSpec, OptimizerState, ParamVector, init_params, optimizer_apply
from p3o.core.policy import (
    CategoricalDistribution,
    PolicySpec,
    entropy,
    init_policy_params,
    kl_exact,
    log_prob,
    policy_distribution,
    sample,
    weighted_entropy_gradient,
    weighted_kl_gradient,
    weighted_score_gradient,
)
from p3o.core.replay import ReplayBuffer, Segment, TransitionBatch
from p3o.core.weighting import (
    RATIO_CAP,
    AdaptiveCoefficients,
    WeightVector,
    adaptive_coefficients,
    clip_ratio,
    fixed_coefficients,
    is_ratios,
    sampled_kl_telemetry,
)
from p3o.models.enums import AdvantageSource, Algorithm, GradientTerm, KlDirection
from p3o.models.run_config import RunConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientTelemetry:
    ess: float = 1.0
    kl_mean: float = 0.0
    entropy_mean: float = 0.0
    lam: float = 0.0
    c: float = 1.0  # +inf when truncation is disabled
    clip_fraction: float = 0.0

    def __post_init__(self):
        for name in ("ess", "kl_mean", "entropy_mean", "lam", "clip_fraction"):
            if not np.isfinite(getattr(self, name)):
                raise NumericError(f"telemetry {name} is not finite")

        if not 0.0 <= self.clip_fraction <= 1.0:
            raise InputError(f"clip_fraction must lie in [0, 1], got {self.clip_fraction}")


@dataclass(frozen=True)
class GradientEstimate:
    grad: ParamVector
    telemetry: GradientTelemetry
    term: GradientTerm

    def __post_init__(self):
        check_finite(self.grad, f"{self.term.value} gradient")


def _check_advantages(batch: TransitionBatch, advantages) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=np.float64).reshape(-1)
    check_same_length("advantages", advantages, "batch", batch.rewards)
    check_finite(advantages, "advantages", InputError)

    if advantages.size == 0:
        raise InputError("gradient of an empty batch is undefined")

    return advantages


def _mean_entropy(spec: PolicySpec, params: ParamVector, states) -> float:
    return float(np.mean(entropy(policy_distribution(spec, params, states))))


def current_ratios(
    spec: PolicySpec, params: ParamVector, batch: TransitionBatch, cap: float = RATIO_CAP
) -> WeightVector:
    """rho = pi_theta(a|s) / beta(a|s) against the stored behavior log-probabilities.

    A -inf target log-probability is floored to a tiny positive ratio.
    """
    target = np.atleast_1d(log_prob(policy_distribution(spec, params, batch.states), batch.actions))

    if np.any(np.isnan(target) | np.isposinf(target)):
        raise NumericError("current policy log-probabilities are not finite")

    return is_ratios(target, batch.behavior_log_probs, cap)


def on_policy_gradient(
    spec: PolicySpec, params: ParamVector, batch: TransitionBatch, advantages, entropy_coef: float = 0.0
) -> GradientEstimate:
    advantages = _check_advantages(batch, advantages)
    n = advantages.shape[0]

    grad = weighted_score_gradient(spec, params, batch.states, batch.actions, advantages / n)

    if entropy_coef > 0:
        grad = grad + entropy_coef * weighted_entropy_gradient(spec, params, batch.states, np.full(n, 1.0 / n))

    telemetry = GradientTelemetry(entropy_mean=_mean_entropy(spec, params, batch.states))

    return GradientEstimate(grad=grad, telemetry=telemetry, term=GradientTerm.ON_POLICY)


def off_policy_gradient(
    spec: PolicySpec,
    params: ParamVector,
    batch: TransitionBatch,
    advantages,
    coeffs: AdaptiveCoefficients,
    ratios: Optional[WeightVector] = None,
) -> GradientEstimate:
    """mean(min(rho, c) * A * grad log pi) over a replayed mini-batch."""
    advantages = _check_advantages(batch, advantages)
    n = advantages.shape[0]

    if ratios is None:
        ratios = current_ratios(spec, params, batch)
    check_same_length("ratios", ratios.weights, "batch", batch.rewards)

    weights = clip_ratio(ratios.weights, coeffs.c)
    grad = weighted_score_gradient(spec, params, batch.states, batch.actions, weights * advantages / n)

    telemetry = GradientTelemetry(
        ess=coeffs.ess,
        kl_mean=sampled_kl_telemetry(ratios),
        entropy_mean=_mean_entropy(spec, params, batch.states),
        lam=coeffs.lam,
        c=coeffs.c,
        clip_fraction=float(np.mean(ratios.weights > coeffs.c)),
    )

    return GradientEstimate(grad=grad, telemetry=telemetry, term=GradientTerm.OFF_POLICY)


def mean_exact_kl(
    spec: PolicySpec,
    params: ParamVector,
    batch: TransitionBatch,
    direction: KlDirection = KlDirection.BEHAVIOR_TARGET,
) -> float:
    current = policy_distribution(spec, params, batch.states)

    if direction == KlDirection.BEHAVIOR_TARGET:
        return float(np.mean(kl_exact(batch.behavior, current)))

    return float(np.mean(kl_exact(current, batch.behavior)))


def kl_penalty_gradient(
    spec: PolicySpec,
    params: ParamVector,
    batch: TransitionBatch,
    lam: float,
    direction: KlDirection = KlDirection.BEHAVIOR_TARGET,
) -> GradientEstimate:
    """-lambda * mean over states of grad KL(snapshot || pi_theta).

    With lambda 0 the gradient is the zero vector and no KL gradient is evaluated.
    """
    check_unit_interval(lam, "lambda")

    if spec.discrete != isinstance(batch.behavior, CategoricalDistribution):
        raise InputError("behavior snapshots do not match the policy's action space")

    telemetry = GradientTelemetry(kl_mean=mean_exact_kl(spec, params, batch, direction), lam=lam)

    if lam == 0.0:
        return GradientEstimate(grad=np.zeros(spec.param_count), telemetry=telemetry, term=GradientTerm.KL_PENALTY)

    n = len(batch)
    grad = -lam * weighted_kl_gradient(spec, params, batch.states, batch.behavior, np.full(n, 1.0 / n), direction)

    return GradientEstimate(grad=grad, telemetry=telemetry, term=GradientTerm.KL_PENALTY)


def interpolated_gradient(on: GradientEstimate, off: GradientEstimate, nu: float) -> GradientEstimate:
    """(1 - nu) * on-policy + nu * off-policy, reported with the off-policy telemetry."""
    check_unit_interval(nu, "nu")

    return GradientEstimate(
        grad=(1.0 - nu) * on.grad + nu * off.grad, telemetry=off.telemetry, term=GradientTerm.INTERPOLATED
    )


# Scalar surrogates whose gradients are the terms above.

def on_policy_surrogate(spec, params, batch: TransitionBatch, advantages, entropy_coef: float = 0.0) -> float:
    dist = policy_distribution(spec, params, batch.states)
    value = np.mean(np.asarray(advantages) * log_prob(dist, batch.actions))

    return float(value + entropy_coef * np.mean(entropy(dist)))


def off_policy_surrogate(spec, params, batch: TransitionBatch, advantages, weights) -> float:
    """Weights are held fixed, as the truncated ratio is in the gradient."""
    dist = policy_distribution(spec, params, batch.states)

    return float(np.mean(np.asarray(weights) * np.asarray(advantages) * log_prob(dist, batch.actions)))


def kl_penalty_surrogate(
    spec, params, batch: TransitionBatch, lam: float, direction: KlDirection = KlDirection.BEHAVIOR_TARGET
) -> float:
    return -lam * mean_exact_kl(spec, params, batch, direction)


# Diagnostics

@dataclass(frozen=True)
class AcerCorrection:
    nonzero_fraction: float
    mean_factor: float


def acer_correction_diagnostic(
    spec: PolicySpec,
    params: ParamVector,
    states,
    behavior,
    c: float,
    rng: Optional[np.random.Generator] = None,
) -> AcerCorrection:
    """Expected (1 - c / rho)_+ under a ~ pi_theta, the factor the on-policy term would carry.

    Discrete policies sum exactly over actions; Gaussian policies draw one
    candidate action per state from ``rng``. Never used in updates.
    """
    if not c > 0:
        raise InputError(f"c must be positive, got {c}")

    current = policy_distribution(spec, params, np.atleast_2d(states))

    if isinstance(current, CategoricalDistribution):
        beta = np.atleast_2d(behavior.probs)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(beta > 0, current.probs / beta, np.inf)
            factor = np.where(rho > 0, np.maximum(1.0 - c / rho, 0.0), 0.0)
        weights = current.probs
    else:
        if rng is None:
            raise InputError("continuous policies need an rng to draw candidate actions")
        candidates = sample(current, rng)
        with np.errstate(over="ignore", divide="ignore"):
            rho = np.exp(log_prob(current, candidates) - log_prob(behavior, candidates))
            factor = np.maximum(1.0 - c / rho, 0.0)[:, None]
        weights = np.ones_like(factor)

    return AcerCorrection(
        nonzero_fraction=float(np.mean(np.sum(weights * (factor > 0), axis=-1))),
        mean_factor=float(np.mean(np.sum(weights * factor, axis=-1))),
    )


@dataclass(frozen=True)
class BiasDecomposition:
    biased_term: ParamVector
    entropy_like_term: ParamVector
    ess: float
    all_clipped: bool  # the closed form assumes rho > c on every transition

    @property
    def biased_coefficient(self) -> float:
        return self.ess

    @property
    def entropy_like_coefficient(self) -> float:
        return 1.0 - self.ess

    @property
    def biased_term_norm(self) -> float:
        return float(np.linalg.norm(self.biased_term))

    @property
    def entropy_like_term_norm(self) -> float:
        return float(np.linalg.norm(self.entropy_like_term))


def bias_decomposition(
    spec: PolicySpec,
    params: ParamVector,
    batch: TransitionBatch,
    advantages,
    coeffs: AdaptiveCoefficients,
    ratios: Optional[WeightVector] = None,
) -> BiasDecomposition:
    """The two bias terms of a P3O step when every ratio exceeds c.

    biased_term       = -ESS * mean(A * grad log pi)            over replayed (s, a)
    entropy_like_term = (1 - ESS) * mean_s sum_a beta grad log pi = -(1 - ESS) grad KL(beta || pi)

    As ESS goes to 0 only the biased term vanishes; the entropy-like term tends
    to the full -grad KL(beta || pi).
    """
    advantages = _check_advantages(batch, advantages)
    n = advantages.shape[0]

    if ratios is None:
        ratios = current_ratios(spec, params, batch)

    biased = -coeffs.ess * weighted_score_gradient(spec, params, batch.states, batch.actions, advantages / n)
    kl_grad = weighted_kl_gradient(spec, params, batch.states, batch.behavior, np.full(n, 1.0 / n))

    return BiasDecomposition(
        biased_term=biased,
        entropy_like_term=-(1.0 - coeffs.ess) * kl_grad,
        ess=coeffs.ess,
        all_clipped=bool(np.all(ratios.weights > coeffs.c)),
    )


# One iteration of learning

@dataclass(frozen=True)
class LearnerState:
    policy_spec: PolicySpec
    value_spec: MlpSpec
    policy_params: ParamVector
    value_params: ParamVector
    policy_opt: OptimizerState
    value_opt: OptimizerState

    @classmethod
    def create(
        cls, policy_spec: PolicySpec, value_spec: MlpSpec, config: RunConfig, rng: np.random.Generator
    ) -> "LearnerState":
        policy_params = init_policy_params(policy_spec, rng)
        value_params = init_params(value_spec, rng, hidden_gain=1.0, output_gain=1.0)

        return cls(
            policy_spec=policy_spec,
            value_spec=value_spec,
            policy_params=policy_params,
            value_params=value_params,
            policy_opt=OptimizerState.create(policy_params.shape[0], config.learning_rate, config.clip_norm),
            value_opt=OptimizerState.create(
                value_params.shape[0], config.value_learning_rate or config.learning_rate, config.clip_norm
            ),
        )

    def policy_step(self, ascent: ParamVector) -> "LearnerState":
        params, opt = optimizer_apply(self.policy_opt, self.policy_params, -ascent)

        return replace(self, policy_params=params, policy_opt=opt)

    def value_step(self, states, targets, value_coef: float) -> Tuple["LearnerState", float]:
        loss, grad = value_loss_and_grad(self.value_spec, self.value_params, states, targets)
        params, opt = optimizer_apply(self.value_opt, self.value_params, value_coef * grad)

        return replace(self, value_params=params, value_opt=opt), loss


@dataclass
class UpdateReport:
    on_policy: GradientTelemetry
    off_policy: List[GradientTelemetry] = field(default_factory=list)
    drawn_updates: int = 0
    value_losses: List[float] = field(default_factory=list)


def segment_targets(
    learner: LearnerState, segments: Sequence[Segment], config: RunConfig, source: AdvantageSource
) -> Tuple[TransitionBatch, np.ndarray, np.ndarray]:
    """Concatenated batch, advantages and value targets for a list of segments.

    ``stored`` uses the returns computed at collection time where a segment has
    them; ``recompute`` runs GAE with the current value function.
    """
    advantages, targets = [], []

    for segment in segments:
        batch = segment.batch

        if source == AdvantageSource.STORED and segment.collected_returns is not None:
            values = value_predictions(learner.value_spec, learner.value_params, batch.states)
            advantages.append(segment.collected_returns - values)
            targets.append(segment.collected_returns)
            continue

        result = segment_advantages(
            learner.value_spec, learner.value_params,
            batch.states, batch.rewards, batch.next_states, batch.terminals, batch.truncateds,
            config.gamma, config.effective_tau,
        )
        advantages.append(result.advantages)
        targets.append(result.targets)

    advantages = np.concatenate(advantages)

    if config.normalize_advantages:
        advantages = normalize_advantages(advantages)

    batch = TransitionBatch.concatenate([segment.batch for segment in segments])

    return batch, advantages, np.concatenate(targets)


def _coefficients(config: RunConfig, ratios: WeightVector) -> AdaptiveCoefficients:
    if config.algorithm == Algorithm.FIXED_COEFF_P3O:
        return fixed_coefficients(ratios, lam=config.lam, c=config.c)
    if config.algorithm == Algorithm.IPG_FIXED_NU:
        return fixed_coefficients(ratios, lam=0.0, c=config.c if config.c is not None else 1.0)

    return adaptive_coefficients(ratios)


def _off_policy_step(
    learner: LearnerState, replay: ReplayBuffer, config: RunConfig, rng: np.random.Generator
) -> Tuple[LearnerState, GradientTelemetry, float]:
    minibatch = replay.sample_minibatch(config.minibatch_segments, rng, config.burn_in)
    batch, advantages, targets = segment_targets(learner, minibatch.segments, config, config.advantage_source)
    spec, params = learner.policy_spec, learner.policy_params

    ratios = current_ratios(spec, params, batch, config.ratio_cap)
    coeffs = _coefficients(config, ratios)
    off = off_policy_gradient(spec, params, batch, advantages, coeffs, ratios)
    kl = kl_penalty_gradient(spec, params, batch, coeffs.lam, config.kl_direction)

    learner = learner.policy_step(off.grad + kl.grad)
    learner, loss = learner.value_step(batch.states, targets, config.value_coef)

    return learner, replace(off.telemetry, kl_mean=kl.telemetry.kl_mean), loss


def _interpolated_update(
    learner: LearnerState,
    on: GradientEstimate,
    batch: TransitionBatch,
    targets: np.ndarray,
    replay: Optional[ReplayBuffer],
    config: RunConfig,
    rng: np.random.Generator,
) -> Tuple[LearnerState, UpdateReport]:
    """Single step on (1 - nu) * on-policy + nu * off-policy gradient, without a KL term."""
    report = UpdateReport(on_policy=on.telemetry)
    ascent = on.grad

    if replay is not None and replay.is_warm(config.burn_in):
        minibatch = replay.sample_minibatch(config.minibatch_segments, rng, config.burn_in)
        replay_batch, advantages, _ = segment_targets(
            learner, minibatch.segments, config, config.advantage_source
        )
        spec, params = learner.policy_spec, learner.policy_params
        ratios = current_ratios(spec, params, replay_batch, config.ratio_cap)
        off = off_policy_gradient(spec, params, replay_batch, advantages, _coefficients(config, ratios), ratios)
        mixed = interpolated_gradient(on, off, config.nu)

        ascent = mixed.grad
        report.off_policy.append(mixed.telemetry)
        report.drawn_updates = 1

    learner = learner.policy_step(ascent)
    learner, loss = learner.value_step(batch.states, targets, config.value_coef)
    report.value_losses.append(loss)

    return learner, report


def combined_update(
    learner: LearnerState,
    segments: Sequence[Segment],
    replay: Optional[ReplayBuffer],
    config: RunConfig,
    rng: np.random.Generator,
) -> Tuple[LearnerState, UpdateReport]:
    """One on-policy step, then xi ~ Poisson(m) off-policy + KL steps on fresh mini-batches.

    Learner states are immutable, so a ``NumericError`` leaves the caller's
    pre-iteration state untouched.
    """
    try:
        batch, advantages, targets = segment_targets(learner, segments, config, AdvantageSource.RECOMPUTE)
        on = on_policy_gradient(
            learner.policy_spec, learner.policy_params, batch, advantages, config.entropy_coef
        )

        if config.algorithm == Algorithm.IPG_FIXED_NU:
            return _interpolated_update(learner, on, batch, targets, replay, config, rng)

        learner = learner.policy_step(on.grad)
        learner, loss = learner.value_step(batch.states, targets, config.value_coef)
        report = UpdateReport(on_policy=on.telemetry, value_losses=[loss])

        if replay is None or not config.uses_replay:
            return learner, report

        report.drawn_updates = poisson_draw(config.m, rng)

        if not replay.is_warm(config.burn_in):
            return learner, report

        for _ in range(report.drawn_updates):
            learner, telemetry, loss = _off_policy_step(learner, replay, config, rng)
            report.off_policy.append(telemetry)
            report.value_losses.append(loss)

        return learner, report
    except NumericError as error:
        logger.warning("update aborted, parameters rolled back: %s", error.detail)
        raise
