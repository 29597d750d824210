import logging

from p3o.core.errors import NumericError
from p3o.core.io import (
    prepare_output_dir,
    resolve_config,
    write_config,
    write_metrics,
    write_params,
    write_summary,
)
from p3o.core.plots import plot_returns, plot_telemetry
from p3o.core.trainer import run_training
from p3o.models.invocation import CliInvocation

logger = logging.getLogger(__name__)

def register(subparsers, common):
    parser = subparsers.add_parser("train", parents=[common], help="Train one run per configured seed")
    parser.add_argument("--plot", action="store_true", help="Write SVG figures next to the CSVs")
    parser.add_argument("--dump-replay", dest="dump_replay", action="store_true",
                        help="Write the final replay buffer of each seed as JSON lines")
    parser.set_defaults(handler=cmd_train)

def cmd_train(invocation: CliInvocation) -> int:
    """Run every seed; one metrics CSV and one parameter file each, plus a summary"""
    config  = resolve_config(invocation)
    out_dir = prepare_output_dir(invocation.output_dir)

    write_config(config, out_dir / "config.json")

    summaries = []
    runs      = {}

    for seed in config.seeds:
        result = run_training(config, seed)

        write_metrics(out_dir / f"metrics_seed{seed}.csv", result.records)
        write_params(result.learner, seed, out_dir / f"params_seed{seed}.json")

        if invocation.dump_replay and result.replay is not None:
            result.replay.dump(out_dir / f"replay_seed{seed}.jsonl")

        if invocation.plot and result.records:
            plot_telemetry(result.records, out_dir / f"telemetry_seed{seed}.svg", title=f"seed {seed}")

        summaries.append(result.summary)
        runs[seed] = result.records

    write_summary(out_dir / "summary.json", config, summaries)

    if invocation.plot:
        plot_returns(runs, out_dir / "returns.svg", title=f"{config.algorithm.value} on {config.env.name}")

    failed = [summary for summary in summaries if not summary.completed]

    if failed:
        for summary in failed:
            logger.error("seed %d stopped after %d iterations: %s", summary.seed, summary.iterations, summary.error)

        return NumericError.status_code

    logger.info("trained %d seeds, artifacts in %s", len(summaries), out_dir)

    return 0
