"""Command-line entry point: ``p3o train | eval | diag``."""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from p3o.commands import diag, evaluate, train
from p3o.core.config import settings
from p3o.core.errors import ConfigurationError, P3OError
from p3o.core.io import describe_validation_error
from p3o.core.logging import configure_logging
from p3o.models.invocation import CliInvocation

logger = logging.getLogger(__name__)

INVOCATION_FIELDS = set(CliInvocation.model_fields)


def common_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand; overrides are applied on top of the config file."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", dest="config_path", help="JSON run config")
    common.add_argument("-o", "--output-dir", dest="output_dir", default="runs")
    common.add_argument("--seed", type=int, help="Run this single seed instead of the configured list")
    common.add_argument("--no-gae", dest="no_gae", action="store_true", help="n-step returns (tau = 1)")
    common.add_argument("--lambda", dest="lam", type=float, help="Fixed KL coefficient")
    common.add_argument("--c", type=float, help="Fixed truncation threshold")
    common.add_argument("--m", type=float, help="Poisson mean of off-policy updates")
    common.add_argument("--nu", type=float, help="Interpolation weight of the ipg_fixed_nu baseline")
    common.add_argument("--T", dest="rollout_steps", type=int, help="Rollout length")
    common.add_argument("--total-steps", dest="total_steps", type=int)
    common.add_argument("--log-level", dest="log_level", default=None)

    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p3o", description=f"{settings.PROJECT_NAME} {settings.VERSION}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    common = common_options()

    train.register(subparsers, common)
    evaluate.register(subparsers, common)
    diag.register(subparsers, common)

    return parser


def to_invocation(args: argparse.Namespace) -> CliInvocation:
    values = {key: value for key, value in vars(args).items() if key in INVOCATION_FIELDS and value is not None}

    if "target" in vars(args):
        values["diag_target"] = args.target

    try:
        return CliInvocation(**values)
    except ValidationError as error:
        raise ConfigurationError(f"invalid arguments: {describe_validation_error(error)}") from error


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        return args.handler(to_invocation(args))
    except P3OError as error:
        logger.error(error.detail)
        print(f"error: {error.detail}", file=sys.stderr)

        return error.status_code


if __name__ == "__main__":
    sys.exit(main())
