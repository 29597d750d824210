from dataclasses import replace

import numpy as np
import pytest

import p3o.core.p3o_grad as p3o_grad
from p3o.core.errors import InputError, NumericError
from p3o.core.methods import poisson_draw
from p3o.core.numcore import numerical_gradient, relative_error
from p3o.core.p3o_grad import (
    acer_correction_diagnostic,
    bias_decomposition,
    combined_update,
    current_ratios,
    interpolated_gradient,
    kl_penalty_gradient,
    kl_penalty_surrogate,
    off_policy_gradient,
    off_policy_surrogate,
    on_policy_gradient,
    on_policy_surrogate,
    segment_targets,
)
from p3o.core.policy import (
    CategoricalDistribution,
    GaussianDistribution,
    PolicySnapshot,
    PolicySpec,
    policy_distribution,
    weighted_kl_gradient,
    weighted_score_gradient,
)
from p3o.core.replay import Segment, Transition
from p3o.core.weighting import AdaptiveCoefficients, WeightVector, adaptive_coefficients
from p3o.models.enums import ActionSpace, AdvantageSource, GradientTerm, KlDirection
from tests.conftest import build_segment


def snapshot_batch(behaviors, actions, states=None):
    """Batch whose transitions carry the given behavior distributions."""
    states = np.ones((len(actions), 1)) if states is None else states
    transitions = [
        Transition(
            state=states[k], action=action, reward=0.0, next_state=states[k], terminal=False,
            behavior=PolicySnapshot.record(behavior, action),
        )
        for k, (behavior, action) in enumerate(zip(behaviors, actions))
    ]

    return Segment(transitions=transitions).batch


@pytest.fixture
def discrete_batch(discrete_spec, rng):
    params = rng.standard_normal(discrete_spec.param_count)
    batch = build_segment(discrete_spec, params, rng.standard_normal((6, 3)), rng).batch

    return params, batch


class TestOnPolicyGradient:
    """Baselined score-function gradient with entropy bonus"""

    def test_zero_advantages(self, discrete_spec, discrete_batch):
        """Zero advantages and no entropy bonus give a zero gradient"""
        params, batch = discrete_batch
        estimate = on_policy_gradient(discrete_spec, params, batch, np.zeros(len(batch)))

        assert np.array_equal(estimate.grad, np.zeros(discrete_spec.param_count))

    def test_bandit_direction(self, bandit_spec):
        """A positive advantage on arm 0 raises its logit and lowers the other"""
        uniform = CategoricalDistribution(np.array([0.5, 0.5]))
        batch = snapshot_batch([uniform], [0])
        estimate = on_policy_gradient(bandit_spec, np.zeros(4), batch, [1.0])

        assert estimate.grad[2] == pytest.approx(0.5)
        assert estimate.grad[3] == pytest.approx(-0.5)

    def test_matches_surrogate(self, discrete_spec, gaussian_spec, rng):
        """The gradient is the derivative of the on-policy surrogate"""
        for trial in range(100):
            spec = discrete_spec if trial % 2 else gaussian_spec
            params = rng.standard_normal(spec.param_count)
            batch = build_segment(spec, params, rng.standard_normal((4, 3)), rng).batch
            advantages = rng.standard_normal(4)

            estimate = on_policy_gradient(spec, params, batch, advantages, entropy_coef=0.01)
            numeric = numerical_gradient(
                lambda p: on_policy_surrogate(spec, p, batch, advantages, 0.01), params.copy()
            )

            assert relative_error(estimate.grad, numeric) < 1e-5

    def test_length_mismatch(self, discrete_spec, discrete_batch):
        params, batch = discrete_batch

        with pytest.raises(InputError):
            on_policy_gradient(discrete_spec, params, batch, np.zeros(len(batch) + 1))


class TestOffPolicyGradient:
    """Truncated importance-weighted gradient on replayed data"""

    def test_on_policy_limit(self, discrete_spec, discrete_batch, rng):
        """With pi equal to the behavior the term equals the on-policy gradient"""
        params, batch = discrete_batch
        advantages = rng.standard_normal(len(batch))
        ratios = current_ratios(discrete_spec, params, batch)
        coeffs = adaptive_coefficients(ratios)

        on = on_policy_gradient(discrete_spec, params, batch, advantages)
        off = off_policy_gradient(discrete_spec, params, batch, advantages, coeffs, ratios)

        assert np.allclose(ratios.weights, 1.0, atol=1e-12)
        assert coeffs.ess == pytest.approx(1.0)
        assert np.max(np.abs(off.grad - on.grad)) < 1e-10
        assert off.telemetry.clip_fraction == 0.0

    def test_all_clipped(self, discrete_spec, discrete_batch, rng):
        """Every ratio above c scales the on-policy gradient by c"""
        params, batch = discrete_batch
        advantages = rng.standard_normal(len(batch))
        coeffs = AdaptiveCoefficients(lam=0.5, c=0.5, ess=0.5)

        on = on_policy_gradient(discrete_spec, params, batch, advantages)
        off = off_policy_gradient(
            discrete_spec, params, batch, advantages, coeffs, WeightVector(np.full(len(batch), 5.0))
        )

        assert np.allclose(off.grad, 0.5 * on.grad, atol=1e-12)
        assert off.telemetry.clip_fraction == 1.0

    def test_truncation_by_hand(self, discrete_spec, rng):
        """rho = [0.5, 2] with c = 0.8 weighs the transitions by [0.5, 0.8]"""
        params = rng.standard_normal(discrete_spec.param_count)
        batch = build_segment(discrete_spec, params, rng.standard_normal((2, 3)), rng).batch
        advantages = np.array([1.0, -2.0])
        coeffs = AdaptiveCoefficients(lam=0.2, c=0.8, ess=0.8)

        off = off_policy_gradient(discrete_spec, params, batch, advantages, coeffs, WeightVector(np.array([0.5, 2.0])))
        expected = weighted_score_gradient(
            discrete_spec, params, batch.states, batch.actions, np.array([0.5, 0.8]) * advantages / 2
        )

        assert np.allclose(off.grad, expected, atol=1e-12)
        assert off.telemetry.clip_fraction == 0.5

    def test_matches_surrogate(self, discrete_spec, gaussian_spec, rng):
        """With the truncated weights held fixed the gradient matches the surrogate"""
        for trial in range(100):
            spec = discrete_spec if trial % 2 else gaussian_spec
            behavior_params = rng.standard_normal(spec.param_count)
            params = behavior_params + 0.3 * rng.standard_normal(spec.param_count)
            batch = build_segment(spec, behavior_params, rng.standard_normal((4, 3)), rng).batch
            advantages = rng.standard_normal(4)
            ratios = current_ratios(spec, params, batch)
            coeffs = adaptive_coefficients(ratios)

            off = off_policy_gradient(spec, params, batch, advantages, coeffs, ratios)
            weights = np.minimum(ratios.weights, coeffs.c)
            numeric = numerical_gradient(
                lambda p: off_policy_surrogate(spec, p, batch, advantages, weights), params.copy()
            )

            assert relative_error(off.grad, numeric) < 1e-5


class TestKlPenaltyGradient:
    """-lambda * grad KL(beta || pi)"""

    def test_zero_lambda_skips_kl_gradient(self, discrete_spec, discrete_batch, monkeypatch):
        """lambda 0 returns zeros without evaluating a KL gradient"""
        params, batch = discrete_batch

        def fail(*args, **kwargs):
            raise AssertionError("KL gradient evaluated with lambda 0")

        monkeypatch.setattr(p3o_grad, "weighted_kl_gradient", fail)
        estimate = kl_penalty_gradient(discrete_spec, params, batch, 0.0)

        assert np.array_equal(estimate.grad, np.zeros(discrete_spec.param_count))

    def test_identical_snapshots(self, discrete_spec, gaussian_spec, rng):
        """Behavior equal to the current policy gives zero KL and zero gradient"""
        for spec in (discrete_spec, gaussian_spec):
            params = rng.standard_normal(spec.param_count)
            batch = build_segment(spec, params, rng.standard_normal((4, 3)), rng).batch
            estimate = kl_penalty_gradient(spec, params, batch, 0.5)

            assert np.allclose(estimate.grad, 0.0, atol=1e-12)
            assert estimate.telemetry.kl_mean == pytest.approx(0.0, abs=1e-12)

    def test_gaussian_pull_towards_behavior(self):
        """pi = N(0, 1), beta = N(1, 1), lambda 0.5 at state 0"""
        spec = PolicySpec(action_space=ActionSpace.CONTINUOUS, observation_dim=1, action_dim=1)
        behavior = GaussianDistribution(mean=np.array([1.0]), std=np.array([1.0]))
        batch = snapshot_batch([behavior], [np.array([0.3])], states=np.zeros((1, 1)))

        estimate = kl_penalty_gradient(spec, np.zeros(3), batch, 0.5)

        assert estimate.grad[1] == pytest.approx(0.5)
        assert estimate.grad[2] == pytest.approx(0.5)
        assert estimate.telemetry.kl_mean == pytest.approx(0.5)

    def test_matches_surrogate(self, discrete_spec, gaussian_spec, rng):
        """Both KL directions differentiate the exact penalty surrogate"""
        for trial in range(100):
            spec = discrete_spec if trial % 2 else gaussian_spec
            behavior_params = rng.standard_normal(spec.param_count)
            params = behavior_params + 0.3 * rng.standard_normal(spec.param_count)
            batch = build_segment(spec, behavior_params, rng.standard_normal((4, 3)), rng).batch

            for direction in KlDirection:
                estimate = kl_penalty_gradient(spec, params, batch, 0.3, direction)
                numeric = numerical_gradient(
                    lambda p: kl_penalty_surrogate(spec, p, batch, 0.3, direction), params.copy()
                )

                assert relative_error(estimate.grad, numeric) < 1e-5

    def test_mismatched_action_space(self, gaussian_spec, rng):
        params = rng.standard_normal(gaussian_spec.param_count)
        batch = snapshot_batch([CategoricalDistribution(np.array([0.5, 0.5]))], [0], states=np.zeros((1, 3)))

        with pytest.raises(InputError):
            kl_penalty_gradient(gaussian_spec, params, batch, 0.5)


class TestInterpolatedGradient:
    """(1 - nu) * on-policy + nu * off-policy"""

    def test_mixture(self, discrete_spec, discrete_batch, rng):
        """nu 0.25 mixes the two terms and carries the off-policy telemetry"""
        params, batch = discrete_batch
        advantages = rng.standard_normal(len(batch))
        coeffs = AdaptiveCoefficients(lam=0.5, c=0.5, ess=0.5)
        on = on_policy_gradient(discrete_spec, params, batch, advantages)
        off = off_policy_gradient(
            discrete_spec, params, batch, advantages, coeffs, WeightVector(np.full(len(batch), 5.0))
        )

        mixed = interpolated_gradient(on, off, 0.25)

        assert mixed.term == GradientTerm.INTERPOLATED
        assert np.allclose(mixed.grad, 0.75 * on.grad + 0.25 * off.grad, atol=1e-15)
        assert mixed.telemetry == off.telemetry
        assert np.array_equal(interpolated_gradient(on, off, 0.0).grad, on.grad)

    def test_nu_range(self, discrete_spec, discrete_batch):
        params, batch = discrete_batch
        on = on_policy_gradient(discrete_spec, params, batch, np.zeros(len(batch)))

        with pytest.raises(InputError):
            interpolated_gradient(on, on, 1.5)


class TestAcerCorrection:
    """Expected (1 - c / rho)_+ under the current policy"""

    def test_large_c(self, discrete_spec, rng):
        """c = 10 with pi equal to beta never corrects"""
        params = rng.standard_normal(discrete_spec.param_count)
        states = rng.standard_normal((5, 3))
        behavior = policy_distribution(discrete_spec, params, states)

        result = acer_correction_diagnostic(discrete_spec, params, states, behavior, 10.0)

        assert (result.nonzero_fraction, result.mean_factor) == (0.0, 0.0)

    def test_tiny_c(self, discrete_spec, rng):
        """c near 0 makes the correction nearly always active with factor near 1"""
        params = rng.standard_normal(discrete_spec.param_count)
        states = rng.standard_normal((5, 3))
        behavior = policy_distribution(discrete_spec, params, states)

        result = acer_correction_diagnostic(discrete_spec, params, states, behavior, 1e-9)

        assert result.nonzero_fraction == pytest.approx(1.0)
        assert result.mean_factor == pytest.approx(1.0, abs=1e-8)

    def test_half(self, discrete_spec, rng):
        """pi equal to beta with c = 0.5 gives factor 0.5 everywhere"""
        params = rng.standard_normal(discrete_spec.param_count)
        states = rng.standard_normal((5, 3))
        behavior = policy_distribution(discrete_spec, params, states)

        result = acer_correction_diagnostic(discrete_spec, params, states, behavior, 0.5)

        assert result.mean_factor == pytest.approx(0.5)

    def test_gaussian_needs_rng(self, gaussian_spec, rng):
        params = rng.standard_normal(gaussian_spec.param_count)
        states = rng.standard_normal((5, 3))
        behavior = policy_distribution(gaussian_spec, params, states)

        with pytest.raises(InputError):
            acer_correction_diagnostic(gaussian_spec, params, states, behavior, 1.0)

        result = acer_correction_diagnostic(gaussian_spec, params, states, behavior, 0.5, rng)

        assert result.mean_factor == pytest.approx(0.5)

    def test_non_positive_c(self, discrete_spec, rng):
        params = rng.standard_normal(discrete_spec.param_count)
        states = rng.standard_normal((2, 3))

        with pytest.raises(InputError):
            acer_correction_diagnostic(discrete_spec, params, states, policy_distribution(discrete_spec, params, states), 0.0)


class TestBiasDecomposition:
    """Biased term and entropy-like term of a fully clipped step"""

    def test_unit_ess(self, discrete_spec, discrete_batch, rng):
        """ESS 1 leaves no entropy-like term"""
        params, batch = discrete_batch
        coeffs = AdaptiveCoefficients(lam=0.0, c=1.0, ess=1.0)

        result = bias_decomposition(discrete_spec, params, batch, rng.standard_normal(len(batch)), coeffs)

        assert result.entropy_like_term_norm == 0.0

    def test_vanishing_ess(self, discrete_spec, discrete_batch, rng):
        """ESS near 0 removes the biased term and leaves the full -grad KL(beta || pi)"""
        params, batch = discrete_batch
        params = params + rng.standard_normal(params.shape)
        coeffs = AdaptiveCoefficients(lam=1.0 - 1e-10, c=1e-10, ess=1e-10)
        kl_grad = weighted_kl_gradient(
            discrete_spec, params, batch.states, batch.behavior, np.full(len(batch), 1.0 / len(batch))
        )

        result = bias_decomposition(discrete_spec, params, batch, rng.standard_normal(len(batch)), coeffs)

        assert result.biased_coefficient == 1e-10
        assert result.entropy_like_coefficient == pytest.approx(1.0)
        assert result.biased_term_norm < 1e-8
        assert np.linalg.norm(kl_grad) > 1e-3
        assert result.entropy_like_term == pytest.approx(-kl_grad, rel=1e-8, abs=1e-12)
        assert result.entropy_like_term_norm == pytest.approx(np.linalg.norm(kl_grad), rel=1e-8)

    def test_vanishing_ess_bandit(self, bandit_spec):
        """pi = [0.5, 0.5], beta = [0.8, 0.2]: the entropy-like norm tends to 0.6"""
        batch = snapshot_batch([CategoricalDistribution(np.array([0.8, 0.2]))], [0])
        coeffs = AdaptiveCoefficients(lam=1.0 - 1e-10, c=1e-10, ess=1e-10)

        result = bias_decomposition(bandit_spec, np.zeros(4), batch, [1.0], coeffs)

        assert result.biased_term_norm < 1e-8
        assert result.entropy_like_term_norm == pytest.approx(0.6)

    def test_bandit_by_hand(self, bandit_spec):
        """pi = [0.5, 0.5], beta = [0.8, 0.2], action 0, A = 1, ESS 0.6"""
        batch = snapshot_batch([CategoricalDistribution(np.array([0.8, 0.2]))], [0])
        coeffs = AdaptiveCoefficients(lam=0.4, c=0.6, ess=0.6)

        result = bias_decomposition(bandit_spec, np.zeros(4), batch, [1.0], coeffs)

        assert result.biased_term == pytest.approx([-0.3, 0.3, -0.3, 0.3])
        assert result.entropy_like_term == pytest.approx([0.12, -0.12, 0.12, -0.12])
        assert result.all_clipped


class TestSegmentTargets:
    """Advantages from stored returns or a fresh GAE pass"""

    def test_stored_returns(self, make_config, learner_setup, fill_replay):
        """The stored source regresses on the returns recorded at collection time"""
        config = make_config(normalize_advantages=False)
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps)

        for segment in segments:
            segment.collected_returns = np.ones(len(segment))

        _, advantages, targets = segment_targets(learner, segments, config, AdvantageSource.STORED)
        _, _, recomputed = segment_targets(learner, segments, config, AdvantageSource.RECOMPUTE)

        assert np.array_equal(targets, np.ones(len(targets)))
        assert advantages.shape == recomputed.shape


class TestCombinedUpdate:
    """One on-policy step followed by a Poisson number of off-policy steps"""

    def test_cold_buffer(self, make_config, learner_setup, fill_replay, rng):
        """Before burn-in no off-policy step runs"""
        config = make_config(burn_in=1000)
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps)

        updated, report = combined_update(learner, segments, replay, config, rng)

        assert report.off_policy == []
        assert len(report.value_losses) == 1
        assert not np.array_equal(updated.policy_params, learner.policy_params)

    def test_zero_mean(self, make_config, learner_setup, fill_replay, rng):
        """m = 0 never draws an off-policy step"""
        config = make_config(m=0.0)
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps, iterations=3)

        _, report = combined_update(learner, segments, replay, config, rng)

        assert report.drawn_updates == 0
        assert report.off_policy == []

    def test_unregularized_variant_skips_kl(self, make_config, learner_setup, fill_replay, rng, monkeypatch):
        """lambda 0 and c = inf run off-policy steps without any KL gradient"""
        config = make_config(**{"algorithm": "fixed_coeff_p3o", "lambda": 0.0, "c": float("inf")})
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps, iterations=2)

        def fail(*args, **kwargs):
            raise AssertionError("KL gradient evaluated with lambda 0")

        monkeypatch.setattr(p3o_grad, "weighted_kl_gradient", fail)
        monkeypatch.setattr(p3o_grad, "poisson_draw", lambda mean, generator: 3)

        _, report = combined_update(learner, segments, replay, config, rng)

        assert len(report.off_policy) == 3
        assert all(t.lam == 0.0 and t.c == float("inf") and t.clip_fraction == 0.0 for t in report.off_policy)

    def test_adaptive_coefficients_sum_to_one(self, make_config, learner_setup, fill_replay, rng, monkeypatch):
        """Every off-policy step reports lambda + c = 1 and ESS in (0, 1]"""
        config = make_config()
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps, iterations=2)
        monkeypatch.setattr(p3o_grad, "poisson_draw", lambda mean, generator: 2)

        _, report = combined_update(learner, segments, replay, config, rng)

        assert len(report.off_policy) == 2
        for telemetry in report.off_policy:
            assert telemetry.lam + telemetry.c == pytest.approx(1.0, abs=1e-12)
            assert 0.0 < telemetry.ess <= 1.0

    def test_interpolated_baseline(self, make_config, learner_setup, fill_replay, rng):
        """The interpolated variant takes a single mixed step without a KL term"""
        config = make_config(algorithm="ipg_fixed_nu", nu=0.5)
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps, iterations=2)

        _, report = combined_update(learner, segments, replay, config, rng)

        assert report.drawn_updates == 1
        assert len(report.off_policy) == 1
        assert report.off_policy[0].lam == 0.0

    def test_saturated_softmax(self, make_config, learner_setup, fill_replay, rng, monkeypatch):
        """Replayed actions whose probability underflows to 0 get a tiny positive ratio"""
        config = make_config()
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps, iterations=2)
        monkeypatch.setattr(p3o_grad, "poisson_draw", lambda mean, generator: 5)

        params = learner.policy_params.copy()
        params[-learner.policy_spec.action_dim] += 2000.0
        learner = replace(learner, policy_params=params)

        ratios = current_ratios(learner.policy_spec, learner.policy_params, replay.segments[0].batch)
        updated, report = combined_update(learner, segments, replay, config, rng)

        assert np.all(ratios.weights > 0.0)
        assert len(report.off_policy) == 5
        assert all(0.0 < t.ess <= 1.0 and np.isfinite(t.kl_mean) for t in report.off_policy)
        assert np.all(np.isfinite(updated.policy_params))

    def test_numeric_error_leaves_learner_untouched(self, make_config, learner_setup, fill_replay, rng, monkeypatch):
        """A failing optimizer step propagates and the caller keeps its parameters"""
        config = make_config()
        learner, workers, replay = learner_setup(config)
        segments = fill_replay(learner, workers, replay, config.rollout_steps)
        before = learner.policy_params.copy()

        def explode(*args, **kwargs):
            raise NumericError("gradient is not finite")

        monkeypatch.setattr(p3o_grad, "optimizer_apply", explode)

        with pytest.raises(NumericError):
            combined_update(learner, segments, replay, config, rng)

        assert np.array_equal(learner.policy_params, before)


class TestPoissonDraw:
    def test_mean(self):
        """The sample mean of 10^4 Poisson(2) draws lies within 3 sigma of 2"""
        rng = np.random.default_rng(7)
        draws = [poisson_draw(2.0, rng) for _ in range(10_000)]

        assert abs(np.mean(draws) - 2.0) <= 3 * np.sqrt(2.0 / 10_000)

    def test_zero_mean(self):
        assert poisson_draw(0.0, np.random.default_rng(0)) == 0

    def test_negative_mean(self):
        with pytest.raises(InputError):
            poisson_draw(-1.0, np.random.default_rng(0))
