import logging

from p3o.core.envs import make_env
from p3o.core.errors import ConfigurationError
from p3o.core.io import load_policy, prepare_output_dir, resolve_config, write_models
from p3o.core.methods import spawn_rngs
from p3o.core.trainer import evaluate_policy
from p3o.models.invocation import CliInvocation
from p3o.models.records import EvaluationRecord

logger = logging.getLogger(__name__)

def register(subparsers, common):
    parser = subparsers.add_parser("eval", parents=[common], help="Evaluate a saved policy")
    parser.add_argument("--params", dest="params_path", required=True, help="Parameter file written by train")
    parser.add_argument("--episodes", type=int, default=100)
    parser.set_defaults(handler=cmd_eval)

def cmd_eval(invocation: CliInvocation) -> int:
    """Stochastic episodes of a stored policy on the configured environment"""
    if invocation.params_path is None:
        raise ConfigurationError("eval needs --params")

    config = resolve_config(invocation)
    policy = load_policy(invocation.params_path)
    env    = make_env(config.env)

    if ( policy.spec.observation_dim, policy.spec.action_dim ) != ( env.observation_dim, env.action_dim ):
        raise ConfigurationError(
            f"policy expects {policy.spec.observation_dim} observations and {policy.spec.action_dim} actions, "
            f"environment {config.env.name} has {env.observation_dim} and {env.action_dim}"
        )

    seed   = config.seeds[0]
    stats  = evaluate_policy(env, policy, invocation.episodes, spawn_rngs(seed, 1)[0])
    record = EvaluationRecord(seed=seed, episodes=invocation.episodes, mean_return=stats.mean, std_return=stats.std)

    out_dir = prepare_output_dir(invocation.output_dir)
    write_models(out_dir / "evaluation.csv", [record], EvaluationRecord)

    logger.info("%d episodes: mean return %.6g (std %.6g)", record.episodes, record.mean_return, record.std_return)

    return 0
