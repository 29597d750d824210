"""Training loop: parallel rollouts, replay bookkeeping and per-iteration metrics.

A run draws its random streams from one seed: one for parameter
initialization, one for the update phase (Poisson counts and mini-batch
sampling) and one per environment instance. Each worker owns its stream, so
stepping workers on a thread pool does not change any result.
"""
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from p3o.core.advantage import segment_advantages
from p3o.core.config import settings
from p3o.core.envs import Environment, env_reset, env_step, make_env
from p3o.core.errors import InputError, NumericError
from p3o.core.methods import spawn_rngs
from p3o.core.numcore import MlpSpec
from p3o.core.p3o_grad import LearnerState, UpdateReport, combined_update
from p3o.core.policy import (
    ActionDistribution,
    PolicySnapshot,
    PolicySpec,
    index_distribution,
    policy_distribution,
    sample,
)
from p3o.core.replay import ReplayBuffer, Segment, Transition
from p3o.models.enums import Algorithm
from p3o.models.records import MetricsRecord, TrainingSummary
from p3o.models.run_config import RunConfig

logger = logging.getLogger(__name__)

RETURN_WINDOW = 100


@dataclass(frozen=True)
class IterationContext:
    iteration: int
    env_steps: int
    learner: LearnerState
    previous: LearnerState
    replay: Optional[ReplayBuffer]
    segments: List[Segment]
    report: UpdateReport
    record: MetricsRecord


IterationCallback = Callable[[IterationContext], None]


@dataclass
class TrainingResult:
    seed: int
    records: List[MetricsRecord]
    learner: LearnerState
    completed: bool = True
    error: Optional[str] = None
    replay: Optional[ReplayBuffer] = None

    @property
    def summary(self) -> TrainingSummary:
        last = self.records[-1] if self.records else None

        return TrainingSummary(
            seed=self.seed,
            iterations=len(self.records),
            env_steps=last.env_steps if last else 0,
            final_return_mean=last.return_mean if last else float("nan"),
            completed=self.completed,
            error=self.error,
        )


@dataclass(frozen=True)
class EpisodeStats:
    mean: float
    std: float
    returns: List[float] = field(default_factory=list)


class RolloutWorker:
    """One environment instance with its own random stream and running episode return."""

    def __init__(self, env: Environment, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self.state = env_reset(env, rng)
        self.episode_return = 0.0

    def step(self, distribution: ActionDistribution) -> Tuple[Transition, Optional[float]]:
        action = sample(distribution, self.rng)
        next_state, reward = env_step(self.env, self.state, action, self.rng)

        transition = Transition(
            state=self.state.observation,
            action=action,
            reward=reward,
            next_state=next_state.observation,
            terminal=next_state.terminal,
            truncated=next_state.truncated,
            behavior=PolicySnapshot.record(distribution, action),
        )
        self.episode_return += reward
        finished = None

        if next_state.done:
            finished = self.episode_return
            self.episode_return = 0.0
            next_state = env_reset(self.env, self.rng)

        self.state = next_state

        return transition, finished


def build_policy_spec(config: RunConfig, env: Environment) -> PolicySpec:
    return PolicySpec(
        action_space=env.action_space,
        observation_dim=env.observation_dim,
        action_dim=env.action_dim,
        hidden_sizes=config.hidden_sizes,
        activation=config.activation,
    )


def build_value_spec(config: RunConfig, env: Environment) -> MlpSpec:
    return MlpSpec(
        layer_sizes=[env.observation_dim, *config.hidden_sizes, 1],
        activations=[config.activation] * len(config.hidden_sizes),
    )


def collect_rollouts(
    learner: LearnerState,
    workers: Sequence[RolloutWorker],
    steps: int,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[List[Segment], List[float]]:
    """Roll every worker forward ``steps`` times with the current policy.

    Returns one segment per worker and the returns of episodes that finished,
    ordered by step and then by worker.
    """
    transitions = [[] for _ in workers]
    finished = []

    for _ in range(steps):
        observations = np.stack([worker.state.observation for worker in workers])
        batched = policy_distribution(learner.policy_spec, learner.policy_params, observations)
        distributions = [index_distribution(batched, k) for k in range(len(workers))]

        if executor is None:
            results = [worker.step(dist) for worker, dist in zip(workers, distributions)]
        else:
            results = list(executor.map(lambda pair: pair[0].step(pair[1]), zip(workers, distributions)))

        for k, (transition, episode_return) in enumerate(results):
            transitions[k].append(transition)
            if episode_return is not None:
                finished.append(episode_return)

    return [Segment(transitions=items) for items in transitions], finished


def _attach_returns(learner: LearnerState, segments: Sequence[Segment], gamma: float):
    """Bootstrapped returns under the value function of collection time."""
    for segment in segments:
        batch = segment.batch
        result = segment_advantages(
            learner.value_spec, learner.value_params,
            batch.states, batch.rewards, batch.next_states, batch.terminals, batch.truncateds,
            gamma, 1.0,
        )
        segment.collected_returns = result.targets


def _metrics_record(
    iteration: int,
    env_steps: int,
    recent: Sequence[float],
    report: UpdateReport,
    config: RunConfig,
    policy_spec: PolicySpec,
    wall_ms: float,
) -> MetricsRecord:
    entropy_mean = report.on_policy.entropy_mean

    if policy_spec.discrete:
        entropy_norm = entropy_mean / math.log(policy_spec.action_dim) if policy_spec.action_dim > 1 else 0.0
    else:
        entropy_norm = entropy_mean

    if report.off_policy:
        last = report.off_policy[-1]
        ess, lam, c, kl_mean, clip_fraction = last.ess, last.lam, last.c, last.kl_mean, last.clip_fraction
    else:
        lam = config.lam if config.algorithm == Algorithm.FIXED_COEFF_P3O and config.lam is not None else 0.0
        ess, c, kl_mean, clip_fraction = 1.0, config.c if config.c is not None else 1.0, 0.0, 0.0

    return MetricsRecord(
        iteration=iteration,
        env_steps=env_steps,
        return_mean=float(np.mean(recent)) if recent else float("nan"),
        ess=ess,
        lam=lam,
        c=c,
        kl_mean=kl_mean,
        entropy_norm=entropy_norm,
        clip_fraction=clip_fraction,
        wall_ms=wall_ms if config.record_wall_time else 0.0,
    )


def run_training(config: RunConfig, seed: int, callback: Optional[IterationCallback] = None) -> TrainingResult:
    """Run iterations until ``total_steps`` environment steps have been consumed."""
    init_rng, update_rng, *env_rngs = spawn_rngs(seed, config.num_envs + 2)

    env = make_env(config.env)
    policy_spec = build_policy_spec(config, env)
    learner = LearnerState.create(policy_spec, build_value_spec(config, env), config, init_rng)
    replay = ReplayBuffer(capacity=config.buffer_capacity) if config.uses_replay else None
    workers = [RolloutWorker(env, rng) for rng in env_rngs]

    if replay is not None and config.rollout_steps > config.buffer_capacity:
        raise InputError(f"rollout length {config.rollout_steps} exceeds replay capacity {config.buffer_capacity}")

    steps_per_iteration = config.num_envs * config.rollout_steps
    iterations = math.ceil(config.total_steps / steps_per_iteration)
    threads = min(settings.P3O_NUM_THREADS, config.num_envs)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    recent = deque(maxlen=RETURN_WINDOW)
    records = []
    env_steps = 0

    logger.info(
        "seed %d: %s on %s for %d iterations of %d steps",
        seed, config.algorithm.value, config.env.name, iterations, steps_per_iteration,
    )

    try:
        for iteration in range(iterations):
            started = time.perf_counter()
            segments, finished = collect_rollouts(learner, workers, config.rollout_steps, executor)
            recent.extend(finished)

            if replay is not None:
                _attach_returns(learner, segments, config.gamma)
                for segment in segments:
                    replay.append(segment)

            previous = learner

            try:
                learner, report = combined_update(learner, segments, replay, config, update_rng)
            except NumericError as error:
                logger.error("seed %d: run aborted at iteration %d: %s", seed, iteration, error.detail)
                return TrainingResult(seed, records, previous, completed=False, error=error.detail, replay=replay)

            env_steps += steps_per_iteration
            wall_ms = (time.perf_counter() - started) * 1000.0
            record = _metrics_record(iteration, env_steps, recent, report, config, policy_spec, wall_ms)
            records.append(record)

            if iteration % config.log_interval == 0 or iteration == iterations - 1:
                logger.info(
                    "seed %d iter %d steps %d return %.4g ess %.3f lambda %.3f off-policy %d/%d",
                    seed, iteration, env_steps, record.return_mean, record.ess, record.lam,
                    len(report.off_policy), report.drawn_updates,
                )

            if callback is not None:
                callback(IterationContext(
                    iteration=iteration,
                    env_steps=env_steps,
                    learner=learner,
                    previous=previous,
                    replay=replay,
                    segments=segments,
                    report=report,
                    record=record,
                ))
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    return TrainingResult(seed, records, learner, replay=replay)


def evaluate_policy(env: Environment, policy, episodes: int, rng: np.random.Generator) -> EpisodeStats:
    """Undiscounted returns of stochastic episodes run to termination or the horizon.

    ``policy`` is anything with a ``distribution(observation)`` method.
    """
    if episodes < 1:
        raise InputError(f"episodes must be at least 1, got {episodes}")

    returns = []

    for _ in range(episodes):
        state = env_reset(env, rng)
        total = 0.0

        while not state.done:
            action = sample(policy.distribution(state.observation), rng)
            state, reward = env_step(env, state, action, rng)
            total += reward

        returns.append(total)

    values = np.array(returns)

    return EpisodeStats(mean=float(values.mean()), std=float(values.std()), returns=returns)
