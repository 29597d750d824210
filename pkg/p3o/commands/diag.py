import logging
from collections import deque

import numpy as np

from p3o.core.analysis import ess_drift_sweep, is_non_increasing, lemma1_sweep
from p3o.core.errors import ConfigurationError, NumericError
from p3o.core.io import prepare_output_dir, resolve_config, write_models
from p3o.core.methods import spawn_rngs
from p3o.core.p3o_grad import acer_correction_diagnostic, bias_decomposition, current_ratios, segment_targets
from p3o.core.policy import policy_distribution
from p3o.core.trainer import IterationContext, run_training
from p3o.core.weighting import adaptive_coefficients
from p3o.models.enums import DiagTarget
from p3o.models.invocation import CliInvocation
from p3o.models.records import AcerCorrectionRow, BiasRow, EssDriftRow, Lemma1Row

logger = logging.getLogger(__name__)

DEFAULT_ACER_C = 10.0

def register(subparsers, common):
    parser = subparsers.add_parser("diag", parents=[common], help="Run a diagnostic and write its CSV")
    parser.add_argument("target", choices=[target.value for target in DiagTarget])
    parser.add_argument("--trials", type=int, default=200, help="Random MDPs for lemma1")
    parser.add_argument("--lag", type=int, default=50, help="Snapshot age in updates for acer-correction")
    parser.set_defaults(handler=cmd_diag)

def cmd_diag(invocation: CliInvocation) -> int:
    if invocation.diag_target is None:
        raise ConfigurationError("diag needs a target")

    out_dir = prepare_output_dir(invocation.output_dir)
    handler = DIAGNOSTICS[invocation.diag_target]

    return handler(invocation, out_dir)

def diag_lemma1(invocation: CliInvocation, out_dir) -> int:
    """Visitation bound on random tabular MDPs"""
    rows = lemma1_sweep(invocation.trials, seed=invocation.seed or 0)
    write_models(out_dir / "lemma1.csv", rows, Lemma1Row)

    violations = sum(not row.holds for row in rows)

    if violations:
        logger.error("bound violated on %d of %d trials", violations, len(rows))

        return 1

    logger.info("bound holds on all %d trials", len(rows))

    return 0

def diag_ess_drift(invocation: CliInvocation, out_dir) -> int:
    """Median ESS against mean separation of two unit Gaussians"""
    rows = ess_drift_sweep(seed=invocation.seed or 0)
    write_models(out_dir / "ess_drift.csv", rows, EssDriftRow)

    if not is_non_increasing([row.median_ess for row in rows]):
        logger.error("median ESS increased with separation: %s", [row.median_ess for row in rows])

        return 1

    return 0

def diag_acer_correction(invocation: CliInvocation, out_dir) -> int:
    """Bias-correction factor of the live policy against a snapshot ``lag`` updates old"""
    c      = invocation.c if invocation.c is not None else DEFAULT_ACER_C
    config = resolve_config(invocation.model_copy(update={"c": None}))
    seed   = config.seeds[0]
    rng    = spawn_rngs(seed, 1)[0]

    history = deque(maxlen=invocation.lag + 1)
    rows    = []

    def record(context: IterationContext):
        history.append(context.learner.policy_params)

        if len(history) <= invocation.lag:
            return

        spec     = context.learner.policy_spec
        states   = np.concatenate([segment.batch.states for segment in context.segments])
        snapshot = policy_distribution(spec, history[0], states)
        result   = acer_correction_diagnostic(spec, context.learner.policy_params, states, snapshot, c, rng)

        rows.append(AcerCorrectionRow(
            iteration        = context.iteration,
            c                = c,
            nonzero_fraction = result.nonzero_fraction,
            mean_factor      = result.mean_factor
        ))

    result = run_training(config, seed, callback=record)
    write_models(out_dir / "acer_correction.csv", rows, AcerCorrectionRow)

    if rows:
        logger.info("final nonzero fraction at c=%g: %.4g", c, rows[-1].nonzero_fraction)

    return 0 if result.completed else NumericError.status_code

def diag_bias(invocation: CliInvocation, out_dir) -> int:
    """Bias decomposition on a replay mini-batch after every warm iteration"""
    config = resolve_config(invocation)
    seed   = config.seeds[0]
    rng    = spawn_rngs(seed, 1)[0]
    rows   = []

    def record(context: IterationContext):
        replay = context.replay

        if replay is None or not replay.is_warm(config.burn_in):
            return

        learner    = context.learner
        minibatch  = replay.sample_minibatch(config.minibatch_segments, rng, config.burn_in)
        batch, advantages, _ = segment_targets(learner, minibatch.segments, config, config.advantage_source)
        ratios     = current_ratios(learner.policy_spec, learner.policy_params, batch, config.ratio_cap)
        coeffs     = adaptive_coefficients(ratios)
        bias       = bias_decomposition(learner.policy_spec, learner.policy_params, batch, advantages, coeffs, ratios)

        rows.append(BiasRow(
            iteration                = context.iteration,
            ess                      = bias.ess,
            biased_coefficient       = bias.biased_coefficient,
            entropy_like_coefficient = bias.entropy_like_coefficient,
            biased_term_norm         = bias.biased_term_norm,
            entropy_like_term_norm   = bias.entropy_like_term_norm,
            all_clipped              = bias.all_clipped
        ))

    result = run_training(config, seed, callback=record)
    write_models(out_dir / "bias.csv", rows, BiasRow)

    if not rows:
        logger.warning("replay never reached burn-in %d; no rows written", config.burn_in)

    return 0 if result.completed else NumericError.status_code

DIAGNOSTICS = {
    DiagTarget.LEMMA1:          diag_lemma1,
    DiagTarget.ESS_DRIFT:       diag_ess_drift,
    DiagTarget.ACER_CORRECTION: diag_acer_correction,
    DiagTarget.BIAS:            diag_bias,
}
