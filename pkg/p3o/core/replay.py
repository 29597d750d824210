"""Bounded FIFO replay of whole rollout segments with behavior-policy snapshots."""
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Deque, List, Optional, Union

import numpy as np

from p3o.core.errors import InputError, StateError
from p3o.core.policy import (
    ActionDistribution,
    CategoricalDistribution,
    GaussianDistribution,
    PolicySnapshot,
    floor_snapshot,
    stack_distributions,
)
from p3o.models.records import BufferHeader, SegmentRecord

logger = logging.getLogger(__name__)

REPLAY_FORMAT = "p3o-replay"
REPLAY_VERSION = 1


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: Union[int, np.ndarray]
    reward: float
    next_state: np.ndarray
    terminal: bool
    behavior: PolicySnapshot
    truncated: bool = False


@dataclass(frozen=True)
class TransitionBatch:
    """Column view over a run of transitions, ready for vectorised gradients."""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    truncateds: np.ndarray
    behavior: ActionDistribution
    behavior_log_probs: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @classmethod
    def concatenate(cls, batches: List["TransitionBatch"]) -> "TransitionBatch":
        first = batches[0].behavior

        if isinstance(first, CategoricalDistribution):
            behavior = CategoricalDistribution(np.concatenate([b.behavior.probs for b in batches]))
        else:
            behavior = GaussianDistribution(
                mean=np.concatenate([b.behavior.mean for b in batches]),
                std=np.concatenate([b.behavior.std for b in batches]),
            )

        return cls(
            states=np.concatenate([b.states for b in batches]),
            actions=np.concatenate([b.actions for b in batches]),
            rewards=np.concatenate([b.rewards for b in batches]),
            next_states=np.concatenate([b.next_states for b in batches]),
            terminals=np.concatenate([b.terminals for b in batches]),
            truncateds=np.concatenate([b.truncateds for b in batches]),
            behavior=behavior,
            behavior_log_probs=np.concatenate([b.behavior_log_probs for b in batches]),
        )


@dataclass
class Segment:
    """Ordered transitions of one fixed-length rollout of one environment instance.

    ``collected_returns`` holds the bootstrapped returns computed with the value
    function at collection time.
    """
    transitions: List[Transition]
    collected_returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.transitions)

    def validate(self) -> None:
        if not self.transitions:
            raise InputError("segment must contain at least one transition")

        for index, transition in enumerate(self.transitions):
            if not transition.behavior.matches(transition.action):
                raise InputError(
                    f"transition {index}: stored log-probability disagrees with its behavior snapshot"
                )

    @cached_property
    def batch(self) -> TransitionBatch:
        items = self.transitions

        return TransitionBatch(
            states=np.stack([t.state for t in items]),
            actions=np.stack([np.asarray(t.action) for t in items]),
            rewards=np.array([t.reward for t in items], dtype=np.float64),
            next_states=np.stack([t.next_state for t in items]),
            terminals=np.array([t.terminal for t in items], dtype=bool),
            truncateds=np.array([t.truncated for t in items], dtype=bool),
            behavior=stack_distributions([t.behavior.distribution for t in items]),
            behavior_log_probs=np.array([t.behavior.log_prob for t in items], dtype=np.float64),
        )


@dataclass(frozen=True)
class MiniBatch:
    segments: List[Segment]
    indices: List[int]

    @property
    def batch(self) -> TransitionBatch:
        return TransitionBatch.concatenate([segment.batch for segment in self.segments])


@dataclass
class ReplayBuffer:
    capacity: int
    segments: Deque[Segment] = field(default_factory=deque)
    total_stored: int = 0

    def __post_init__(self):
        if self.capacity <= 0:
            raise InputError(f"replay capacity must be positive, got {self.capacity}")

    def __len__(self) -> int:
        """Transitions currently held."""
        return sum(len(segment) for segment in self.segments)

    def append(self, segment: Segment) -> None:
        segment.validate()

        if len(segment) > self.capacity:
            raise InputError(
                f"segment of {len(segment)} transitions exceeds replay capacity {self.capacity}"
            )

        self.segments.append(segment)
        self.total_stored += len(segment)

        stored = len(self)
        while stored > self.capacity:
            stored -= len(self.segments.popleft())

    def is_warm(self, burn_in: int) -> bool:
        return self.total_stored >= burn_in

    def sample_minibatch(self, n_segments: int, rng: np.random.Generator, burn_in: int = 0) -> MiniBatch:
        """Uniform sampling of whole segments with replacement.

        A buffer that has not yet stored ``burn_in`` transitions is cold.
        """
        if n_segments <= 0:
            raise InputError(f"mini-batch size must be positive, got {n_segments}")
        if not self.segments:
            raise StateError("cannot sample from an empty replay buffer")
        if not self.is_warm(burn_in):
            raise StateError(
                f"replay buffer is cold: {self.total_stored} of {burn_in} burn-in transitions stored"
            )

        indices = [int(i) for i in rng.integers(0, len(self.segments), size=n_segments)]

        return MiniBatch(segments=[self.segments[i] for i in indices], indices=indices)

    def dump(self, path: Union[str, Path]) -> None:
        """Write a versioned header line followed by one segment per line."""
        header = BufferHeader(
            format=REPLAY_FORMAT,
            version=REPLAY_VERSION,
            capacity=self.capacity,
            total_stored=self.total_stored,
            segments=len(self.segments),
        )

        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(header.model_dump_json() + "\n")

            for segment in self.segments:
                handle.write(json.dumps(_segment_record(segment).model_dump()) + "\n")

        logger.info("replay buffer dumped to %s (%d segments)", path, len(self.segments))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayBuffer":
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()

        if not lines:
            raise InputError(f"replay file {path} is empty")

        header = BufferHeader.model_validate_json(lines[0])

        if header.format != REPLAY_FORMAT or header.version != REPLAY_VERSION:
            raise InputError(f"unsupported replay file {header.format} v{header.version}")

        buffer = cls(capacity=header.capacity)

        for line in lines[1:]:
            buffer.segments.append(_segment_from_record(SegmentRecord.model_validate(json.loads(line))))

        if len(buffer.segments) != header.segments:
            raise InputError(f"replay file declares {header.segments} segments, found {len(buffer.segments)}")

        buffer.total_stored = header.total_stored

        return buffer


def _distribution_fields(dist: ActionDistribution) -> dict:
    if isinstance(dist, CategoricalDistribution):
        return {"probs": dist.probs.tolist()}

    return {"mean": dist.mean.tolist(), "std": dist.std.tolist()}


def _segment_record(segment: Segment) -> SegmentRecord:
    rows = []

    for t in segment.transitions:
        rows.append({
            "state": t.state.tolist(),
            "action": np.asarray(t.action).tolist(),
            "reward": float(t.reward),
            "next_state": t.next_state.tolist(),
            "terminal": bool(t.terminal),
            "truncated": bool(t.truncated),
            "log_prob": float(t.behavior.log_prob),
            **_distribution_fields(t.behavior.distribution),
        })

    returns = None if segment.collected_returns is None else segment.collected_returns.tolist()

    return SegmentRecord(transitions=rows, collected_returns=returns)


def _segment_from_record(record: SegmentRecord) -> Segment:
    transitions = []

    for row in record.transitions:
        if row.probs is not None:
            distribution = floor_snapshot(CategoricalDistribution(np.array(row.probs)))
            action = int(row.action)
        else:
            distribution = GaussianDistribution(mean=np.array(row.mean), std=np.array(row.std))
            action = np.array(row.action, dtype=np.float64)

        transitions.append(Transition(
            state=np.array(row.state, dtype=np.float64),
            action=action,
            reward=row.reward,
            next_state=np.array(row.next_state, dtype=np.float64),
            terminal=row.terminal,
            truncated=row.truncated,
            behavior=PolicySnapshot(distribution=distribution, log_prob=row.log_prob),
        ))

    returns = None if record.collected_returns is None else np.array(record.collected_returns)

    return Segment(transitions=transitions, collected_returns=returns)
