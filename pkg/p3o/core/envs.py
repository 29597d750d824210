"""Seedable desk-scale environments.

Discrete environments expose one-hot observations and an exact tabular
export; the point-mass reacher is continuous and has none. Every environment
truncates episodes at its horizon, which is reported separately from a true
terminal so bootstrapping can tell the two apart.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from p3o.core.errors import InputError, StateError, UnsupportedError
from p3o.models.enums import ActionSpace
from p3o.models.run_config import ChainConfig, EnvConfig, GridworldConfig, PointMassConfig

logger = logging.getLogger(__name__)

Outcome = Tuple[float, int, float]  # (probability, next cell, reward)


@dataclass(frozen=True)
class EnvState:
    observation: np.ndarray
    position: Union[int, np.ndarray]
    terminal: bool = False
    truncated: bool = False
    step_index: int = 0

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


@dataclass(frozen=True)
class TabularMDP:
    transitions: np.ndarray  # P[s, a, s']
    rewards: np.ndarray      # r[s, a]
    initial: np.ndarray      # d0[s]
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise InputError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.transitions.ndim != 3 or self.transitions.shape[0] != self.transitions.shape[2]:
            raise InputError(f"transition tensor has shape {self.transitions.shape}, expected (S, A, S)")
        if self.rewards.shape != self.transitions.shape[:2]:
            raise InputError("reward table must have shape (S, A)")
        if np.any(np.abs(self.transitions.sum(axis=2) - 1.0) > 1e-12) or np.any(self.transitions < 0):
            raise InputError("every transition row must be a probability vector")
        if abs(self.initial.sum() - 1.0) > 1e-12 or np.any(self.initial < 0):
            raise InputError("initial distribution must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


class Environment(ABC):
    action_space: ActionSpace
    observation_dim: int
    action_dim: int
    horizon: int

    @abstractmethod
    def reset(self, rng: np.random.Generator) -> EnvState:
        ...

    @abstractmethod
    def step(self, state: EnvState, action, rng: np.random.Generator) -> Tuple[EnvState, float]:
        ...

    def export_tabular(self, gamma: float) -> TabularMDP:
        raise UnsupportedError(f"{type(self).__name__} has no finite tabular form")

    def _check_steppable(self, state: EnvState):
        if state.done:
            raise StateError("cannot step an episode that already ended; reset first")


class TabularEnvironment(Environment):
    """Finite environment defined by per-(cell, action) outcome lists."""
    action_space = ActionSpace.DISCRETE

    def __init__(self, n_states: int, n_actions: int, start: int, goal: int, horizon: int):
        self.n_states = n_states
        self.observation_dim = n_states
        self.action_dim = n_actions
        self.start = start
        self.goal = goal
        self.horizon = horizon

    @abstractmethod
    def outcomes(self, cell: int, action: int) -> List[Outcome]:
        ...

    def observe(self, cell: int) -> np.ndarray:
        observation = np.zeros(self.n_states)
        observation[cell] = 1.0
        return observation

    def reset(self, rng: np.random.Generator) -> EnvState:
        return EnvState(observation=self.observe(self.start), position=self.start)

    def step(self, state: EnvState, action, rng: np.random.Generator) -> Tuple[EnvState, float]:
        self._check_steppable(state)
        action = int(action)

        if not 0 <= action < self.action_dim:
            raise InputError(f"action {action} outside [0, {self.action_dim})")

        outcomes = self.outcomes(int(state.position), action)
        u = rng.random()
        cumulative = 0.0
        probability, cell, reward = outcomes[-1]

        for probability, cell, reward in outcomes:
            cumulative += probability
            if u < cumulative:
                break

        terminal = cell == self.goal
        step_index = state.step_index + 1

        return EnvState(
            observation=self.observe(cell),
            position=cell,
            terminal=terminal,
            truncated=not terminal and step_index >= self.horizon,
            step_index=step_index,
        ), reward

    def export_tabular(self, gamma: float) -> TabularMDP:
        transitions = np.zeros((self.n_states, self.action_dim, self.n_states))
        rewards = np.zeros((self.n_states, self.action_dim))

        for cell in range(self.n_states):
            for action in range(self.action_dim):
                if cell == self.goal:
                    transitions[cell, action, cell] = 1.0
                    continue

                for probability, next_cell, reward in self.outcomes(cell, action):
                    transitions[cell, action, next_cell] += probability
                    rewards[cell, action] += probability * reward

        initial = np.zeros(self.n_states)
        initial[self.start] = 1.0

        return TabularMDP(transitions=transitions, rewards=rewards, initial=initial, gamma=gamma)

    def _reward(self, next_cell: int) -> float:
        return self.goal_reward if next_cell == self.goal else -self.step_cost


class ChainEnv(TabularEnvironment):
    """Linear chain; action 0 moves left, action 1 moves right, the last state is the goal."""
    LEFT, RIGHT = 0, 1

    def __init__(self, config: ChainConfig):
        super().__init__(config.length, 2, start=0, goal=config.length - 1, horizon=config.horizon)
        self.goal_reward = config.goal_reward
        self.step_cost = config.step_cost
        self.slip = config.slip

    def _move(self, cell: int, action: int) -> int:
        shift = 1 if action == self.RIGHT else -1
        return min(max(cell + shift, 0), self.n_states - 1)

    def outcomes(self, cell: int, action: int) -> List[Outcome]:
        intended = self._move(cell, action)
        result = [(1.0 - self.slip, intended, self._reward(intended))]

        if self.slip > 0:
            opposite = self._move(cell, 1 - action)
            result.append((self.slip, opposite, self._reward(opposite)))

        return result


class GridworldEnv(TabularEnvironment):
    """Rows x cols grid; bumping into a wall or the border leaves the agent in place."""
    MOVES = [(-1, 0), (0, 1), (1, 0), (0, -1)]  # up, right, down, left

    def __init__(self, config: GridworldConfig):
        self.rows = config.rows
        self.cols = config.cols
        goal = config.goal or (config.rows - 1, config.cols - 1)
        super().__init__(
            config.rows * config.cols, 4,
            start=self.cell(*config.start), goal=self.cell(*goal), horizon=config.horizon,
        )
        self.walls = {self.cell(*wall) for wall in config.walls}
        self.goal_reward = config.goal_reward
        self.step_cost = config.step_cost
        self.slip = config.slip

    def cell(self, row: int, col: int) -> int:
        return row * self.cols + col

    def _move(self, cell: int, action: int) -> int:
        row, col = divmod(cell, self.cols)
        d_row, d_col = self.MOVES[action]
        row, col = row + d_row, col + d_col

        if not (0 <= row < self.rows and 0 <= col < self.cols):
            return cell

        target = self.cell(row, col)

        return cell if target in self.walls else target

    def outcomes(self, cell: int, action: int) -> List[Outcome]:
        merged = {}

        for candidate in range(4):
            probability = self.slip / 4.0 + (1.0 - self.slip if candidate == action else 0.0)
            if probability == 0.0:
                continue
            target = self._move(cell, candidate)
            merged[target] = merged.get(target, 0.0) + probability

        return [(p, target, self._reward(target)) for target, p in merged.items()]


class PointMassEnv(Environment):
    """x' = (1 - damping) x + step_size * clip(a, -1, 1); reward -||x' - goal||^2."""
    action_space = ActionSpace.CONTINUOUS

    def __init__(self, config: PointMassConfig):
        self.observation_dim = config.dim
        self.action_dim = config.dim
        self.horizon = config.horizon
        self.goal = np.zeros(config.dim) if config.goal is None else np.array(config.goal, dtype=np.float64)
        self.start_range = config.start_range
        self.step_size = config.step_size
        self.damping = config.damping

    def reset(self, rng: np.random.Generator) -> EnvState:
        position = rng.uniform(-self.start_range, self.start_range, size=self.observation_dim)
        return EnvState(observation=position.copy(), position=position)

    def step(self, state: EnvState, action, rng: np.random.Generator) -> Tuple[EnvState, float]:
        self._check_steppable(state)
        action = np.asarray(action, dtype=np.float64).reshape(-1)

        if action.shape[0] != self.action_dim:
            raise InputError(f"expected a {self.action_dim}-dimensional action")

        position = (1.0 - self.damping) * state.position + self.step_size * np.clip(action, -1.0, 1.0)
        reward = -float(np.sum((position - self.goal) ** 2))
        step_index = state.step_index + 1

        return EnvState(
            observation=position.copy(),
            position=position,
            truncated=step_index >= self.horizon,
            step_index=step_index,
        ), reward


def make_env(config: EnvConfig) -> Environment:
    if isinstance(config, ChainConfig):
        return ChainEnv(config)
    if isinstance(config, GridworldConfig):
        return GridworldEnv(config)
    return PointMassEnv(config)


def env_reset(env: Environment, rng: np.random.Generator) -> EnvState:
    return env.reset(rng)


def env_step(env: Environment, state: EnvState, action, rng: np.random.Generator) -> Tuple[EnvState, float]:
    return env.step(state, action, rng)


def export_tabular(env: Environment, gamma: float = 0.99) -> TabularMDP:
    return env.export_tabular(gamma)
