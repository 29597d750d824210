import numpy as np
import pytest

from p3o.core.envs import ChainEnv, EnvState, TabularMDP, env_reset, env_step, export_tabular, make_env
from p3o.core.errors import InputError, StateError, UnsupportedError
from p3o.models.enums import ActionSpace
from p3o.models.run_config import ChainConfig, GridworldConfig, PointMassConfig


class TestChain:
    """Linear chain with a rewarding last state"""

    def test_step_into_goal(self, chain_env, rng):
        """Moving right from state 3 reaches the goal with reward 1"""
        state = EnvState(observation=chain_env.observe(3), position=3)

        next_state, reward = env_step(chain_env, state, 1, rng)

        assert next_state.position == 4
        assert reward == 1.0
        assert next_state.terminal
        assert not next_state.truncated

    def test_left_border(self, chain_env, rng):
        """Moving left from the start stays put and pays the step cost"""
        next_state, reward = env_step(chain_env, env_reset(chain_env, rng), 0, rng)

        assert next_state.position == 0
        assert reward == pytest.approx(-0.01)

    def test_horizon_truncates(self, rng):
        """Reaching the horizon away from the goal truncates, it does not terminate"""
        env = ChainEnv(ChainConfig(length=5, horizon=2))
        state = env_reset(env, rng)

        for _ in range(2):
            state, _ = env_step(env, state, 0, rng)

        assert state.truncated and not state.terminal

    def test_stepping_finished_episode(self, chain_env, rng):
        """An ended episode must be reset first"""
        state = EnvState(observation=chain_env.observe(4), position=4, terminal=True)

        with pytest.raises(StateError):
            env_step(chain_env, state, 1, rng)

    def test_invalid_action(self, chain_env, rng):
        with pytest.raises(InputError):
            env_step(chain_env, env_reset(chain_env, rng), 2, rng)

    def test_slip_frequencies(self, rng):
        """With slip 0.2 the opposite move happens a fifth of the time, within 3 sigma"""
        env = ChainEnv(ChainConfig(length=5, slip=0.2))
        state = EnvState(observation=env.observe(2), position=2)
        draws = 10_000

        backwards = sum(env_step(env, state, 1, rng)[0].position == 1 for _ in range(draws))

        assert abs(backwards - 0.2 * draws) <= 3 * np.sqrt(draws * 0.2 * 0.8)


class TestGridworld:
    def test_wall_bump(self, gridworld_env, rng):
        """Walking into a wall leaves the agent in place at the step cost"""
        start = gridworld_env.cell(0, 1)
        state = EnvState(observation=gridworld_env.observe(start), position=start)

        next_state, reward = env_step(gridworld_env, state, 2, rng)

        assert next_state.position == start
        assert reward == pytest.approx(-0.01)

    def test_export_shapes(self, gridworld_env):
        """16 states, 4 actions, stochastic rows and an absorbing goal"""
        mdp = export_tabular(gridworld_env, gamma=0.9)

        assert mdp.transitions.shape == (16, 4, 16)
        assert mdp.rewards.shape == (16, 4)
        assert np.allclose(mdp.transitions.sum(axis=2), 1.0)
        assert np.all(mdp.transitions[15, :, 15] == 1.0)
        assert mdp.initial[0] == 1.0

    def test_export_matches_sampling(self, rng):
        """Sampled next cells follow the exported transition row, within 3 sigma"""
        env = make_env(GridworldConfig(rows=3, cols=3, slip=0.4))
        mdp = export_tabular(env, gamma=0.9)
        cell = env.cell(1, 1)
        state = EnvState(observation=env.observe(cell), position=cell)
        draws = 10_000

        counts = np.bincount([env_step(env, state, 1, rng)[0].position for _ in range(draws)], minlength=9)
        expected = mdp.transitions[cell, 1]
        sigma = np.sqrt(draws * expected * (1 - expected))

        assert np.all(np.abs(counts - draws * expected) <= 3 * sigma + 1e-9)


class TestPointMass:
    def test_zero_action(self, point_mass_env, rng):
        """A zero action only damps the position; the reward is minus squared distance"""
        position = np.array([1.0, -2.0])
        state = EnvState(observation=position.copy(), position=position)

        next_state, reward = env_step(point_mass_env, state, np.zeros(2), rng)

        assert next_state.position == pytest.approx([0.9, -1.8])
        assert reward == pytest.approx(-4.05)

    def test_action_clipped(self, point_mass_env, rng):
        """Actions beyond the unit box move as far as the box edge"""
        state = EnvState(observation=np.zeros(2), position=np.zeros(2))

        next_state, _ = env_step(point_mass_env, state, np.array([5.0, -5.0]), rng)

        assert next_state.position == pytest.approx([0.1, -0.1])

    def test_reset_range(self, point_mass_env, rng):
        state = env_reset(point_mass_env, rng)

        assert point_mass_env.action_space == ActionSpace.CONTINUOUS
        assert np.all(np.abs(state.observation) <= 1.0)

    def test_no_tabular_form(self, point_mass_env):
        with pytest.raises(UnsupportedError):
            export_tabular(point_mass_env)

    def test_goal_dimension(self):
        with pytest.raises(ValueError):
            PointMassConfig(dim=2, goal=[1.0])


class TestTabularMdp:
    def test_rows_must_be_distributions(self):
        with pytest.raises(InputError):
            TabularMDP(
                transitions=np.full((2, 1, 2), 0.4),
                rewards=np.zeros((2, 1)),
                initial=np.array([1.0, 0.0]),
                gamma=0.9,
            )

    def test_gamma_range(self):
        with pytest.raises(InputError):
            TabularMDP(
                transitions=np.ones((1, 1, 1)),
                rewards=np.zeros((1, 1)),
                initial=np.ones(1),
                gamma=1.0,
            )
