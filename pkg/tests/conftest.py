import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from p3o.core.envs import ChainEnv, GridworldEnv, PointMassEnv, make_env
from p3o.core.io import load_config
from p3o.core.methods import spawn_rngs
from p3o.core.p3o_grad import LearnerState
from p3o.core.policy import PolicySnapshot, PolicySpec, index_distribution, policy_distribution, sample
from p3o.core.replay import ReplayBuffer, Segment, Transition
from p3o.core.trainer import RolloutWorker, build_policy_spec, build_value_spec, collect_rollouts
from p3o.models.enums import ActionSpace
from p3o.models.run_config import ChainConfig, GridworldConfig, PointMassConfig

TINY_RUN = {
    "env": {"name": "chain", "length": 5, "horizon": 10},
    "K": 2,
    "T": 4,
    "total_steps": 64,
    "burn_in": 8,
    "buffer_capacity": 64,
    "minibatch_segments": 2,
    "hidden_sizes": [8],
    "seeds": [0, 1, 2],
}


def build_segment(spec, params, states, rng, actions=None, rewards=None) -> Segment:
    """Segment whose behavior snapshots come from ``params`` evaluated on ``states``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    batched = policy_distribution(spec, params, states)
    transitions = []

    for k in range(states.shape[0]):
        dist = index_distribution(batched, k)
        action = sample(dist, rng) if actions is None else actions[k]
        transitions.append(Transition(
            state=states[k],
            action=action,
            reward=0.0 if rewards is None else float(rewards[k]),
            next_state=states[(k + 1) % states.shape[0]],
            terminal=False,
            behavior=PolicySnapshot.record(dist, action),
        ))

    return Segment(transitions=transitions)


@pytest.fixture
def rng():
    """Fresh generator with a fixed seed."""
    return np.random.default_rng(12345)


@pytest.fixture
def discrete_spec():
    """Categorical MLP policy: 3 observations, 4 actions, one hidden layer."""
    return PolicySpec(action_space=ActionSpace.DISCRETE, observation_dim=3, action_dim=4, hidden_sizes=[5])


@pytest.fixture
def gaussian_spec():
    """Diagonal-Gaussian MLP policy: 3 observations, 2 action dimensions."""
    return PolicySpec(action_space=ActionSpace.CONTINUOUS, observation_dim=3, action_dim=2, hidden_sizes=[5])


@pytest.fixture
def bandit_spec():
    """Tabular softmax over two arms: one constant observation, no hidden layer."""
    return PolicySpec(action_space=ActionSpace.DISCRETE, observation_dim=1, action_dim=2)


@pytest.fixture
def chain_env():
    return ChainEnv(ChainConfig(length=5, horizon=20))


@pytest.fixture
def gridworld_env():
    return GridworldEnv(GridworldConfig(rows=4, cols=4, horizon=50, walls=[(1, 1)]))


@pytest.fixture
def point_mass_env():
    return PointMassEnv(PointMassConfig(dim=2, horizon=8, damping=0.1))


@pytest.fixture
def tiny_config():
    """Small chain run that finishes in well under a second."""
    return load_config(dict(TINY_RUN))


@pytest.fixture
def make_config():
    """Factory for small run configs with overrides."""
    def factory(**overrides):
        return load_config({**TINY_RUN, **overrides})

    return factory


@pytest.fixture
def learner_setup():
    """Factory returning (learner, workers, replay) for a config on its environment."""
    def factory(config, seed=0):
        init_rng, _, *env_rngs = spawn_rngs(seed, config.num_envs + 2)
        env = make_env(config.env)
        learner = LearnerState.create(build_policy_spec(config, env), build_value_spec(config, env), config, init_rng)
        workers = [RolloutWorker(env, worker_rng) for worker_rng in env_rngs]
        replay = ReplayBuffer(capacity=config.buffer_capacity)

        return learner, workers, replay

    return factory


@pytest.fixture
def fill_replay():
    """Roll out ``iterations`` times and append every segment to the buffer."""
    def fill(learner, workers, replay, steps, iterations=1):
        segments = []

        for _ in range(iterations):
            segments, _ = collect_rollouts(learner, workers, steps)
            for segment in segments:
                replay.append(segment)

        return segments

    return fill
