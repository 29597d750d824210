"""Reading and writing run artifacts: configs, metric CSVs, parameter files, summaries."""
import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from p3o.core.errors import ConfigurationError
from p3o.core.numcore import as_param_vector
from p3o.core.p3o_grad import LearnerState
from p3o.core.policy import ParametricPolicy
from p3o.models.enums import Algorithm
from p3o.models.invocation import CliInvocation
from p3o.models.records import METRICS_COLUMNS, MetricsRecord, ParamsFile, TrainingSummary
from p3o.models.run_config import RunConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ENV_TAGS = {"chain", "gridworld", "point_mass"}


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")

    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Comma-separated, LF line endings, floats with 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)

        for row in rows:
            writer.writerow([format_value(value) for value in row])


def write_metrics(path: PathLike, records: Sequence[MetricsRecord]) -> None:
    write_csv(path, METRICS_COLUMNS, (record.row() for record in records))


def write_models(path: PathLike, rows: Sequence[BaseModel], model: type) -> None:
    """CSV with one column per field of ``model``."""
    header = list(model.model_fields)
    write_csv(path, header, ([getattr(row, name) for name in header] for row in rows))


def _key_path(loc) -> str:
    parts = [str(part) for part in loc]

    # discriminated unions report the tag as an extra path element
    if len(parts) > 2 and parts[0] == "env" and parts[1] in ENV_TAGS:
        del parts[1]

    return ".".join(parts) or "<root>"


def describe_validation_error(error: ValidationError) -> str:
    return "; ".join(f"{_key_path(item['loc'])}: {item['msg']}" for item in error.errors())


def load_config(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")

    try:
        return RunConfig.model_validate(data)
    except ValidationError as error:
        raise ConfigurationError(f"invalid config: {describe_validation_error(error)}") from error


def parse_config(path: PathLike) -> RunConfig:
    path = Path(path)

    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise ConfigurationError(
            f"malformed JSON in {path} at line {error.lineno} column {error.colno}: {error.msg}"
        ) from error

    return load_config(data)


def config_data(config: RunConfig) -> dict:
    return config.model_dump(by_alias=True)


def write_config(config: RunConfig, path: PathLike) -> None:
    # stdlib json keeps inf (an unbounded c) as Infinity
    Path(path).write_text(json.dumps(config_data(config), indent=2) + "\n", encoding="utf-8")


def apply_overrides(config: RunConfig, invocation: CliInvocation) -> RunConfig:
    """Command-line flags on top of a parsed config, re-validated as a whole.

    ``--lambda`` and ``--c`` switch the default adaptive algorithm to its
    fixed-coefficient variant; ``--nu`` switches it to the interpolated baseline.
    """
    data = config_data(config)
    algorithm = config.algorithm

    if invocation.seed is not None:
        data["seeds"] = [invocation.seed]
    if invocation.no_gae:
        data["use_gae"] = False
    if invocation.m is not None:
        data["m"] = invocation.m
    if invocation.rollout_steps is not None:
        data["T"] = invocation.rollout_steps
    if invocation.total_steps is not None:
        data["total_steps"] = invocation.total_steps

    if invocation.lam is not None:
        data["lambda"] = invocation.lam
        if algorithm == Algorithm.P3O:
            algorithm = Algorithm.FIXED_COEFF_P3O
    if invocation.nu is not None:
        data["nu"] = invocation.nu
        if algorithm == Algorithm.P3O:
            algorithm = Algorithm.IPG_FIXED_NU
    if invocation.c is not None:
        data["c"] = invocation.c
        if algorithm == Algorithm.P3O:
            algorithm = Algorithm.FIXED_COEFF_P3O

    data["algorithm"] = algorithm

    return load_config(data)


def write_params(learner: LearnerState, seed: int, path: PathLike) -> None:
    record = ParamsFile(
        seed=seed,
        policy_spec=learner.policy_spec,
        value_spec=learner.value_spec,
        policy_params=learner.policy_params.tolist(),
        value_params=learner.value_params.tolist(),
    )

    Path(path).write_text(json.dumps(record.model_dump()) + "\n", encoding="utf-8")


def read_params(path: PathLike) -> ParamsFile:
    path = Path(path)

    if not path.is_file():
        raise ConfigurationError(f"parameter file not found: {path}")

    try:
        record = ParamsFile.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as error:
        raise ConfigurationError(f"malformed JSON in {path}: {error.msg}") from error
    except ValidationError as error:
        raise ConfigurationError(f"invalid parameter file: {describe_validation_error(error)}") from error

    if len(record.policy_params) != record.policy_spec.param_count:
        raise ConfigurationError(
            f"parameter file holds {len(record.policy_params)} policy parameters, "
            f"its spec needs {record.policy_spec.param_count}"
        )
    if len(record.value_params) != record.value_spec.param_count:
        raise ConfigurationError("value parameters do not match the stored value spec")

    return record


def load_policy(path: PathLike) -> ParametricPolicy:
    record = read_params(path)

    return ParametricPolicy(record.policy_spec, as_param_vector(record.policy_params))


def write_summary(path: PathLike, config: RunConfig, summaries: List[TrainingSummary]) -> None:
    payload = {
        "algorithm": config.algorithm.value,
        "env": config.env.name,
        "runs": [summary.model_dump() for summary in summaries],
    }

    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def resolve_config(invocation: CliInvocation) -> RunConfig:
    """Config file (or the preset defaults) with the invocation's flag overrides applied."""
    config = parse_config(invocation.config_path) if invocation.config_path else load_config({})

    return apply_overrides(config, invocation)


def prepare_output_dir(path: PathLike) -> Path:
    path = Path(path)

    if path.exists() and not path.is_dir():
        raise ConfigurationError(f"output path {path} exists and is not a directory")

    path.mkdir(parents=True, exist_ok=True)

    return path
