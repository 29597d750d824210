from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from p3o.core.numcore import MlpSpec
from p3o.core.policy import PolicySpec

METRICS_COLUMNS = [
    "iteration", "env_steps", "return_mean", "ess", "lambda", "c",
    "kl_mean", "entropy_norm", "clip_fraction", "wall_ms",
]

class MetricsRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    iteration: int = Field(ge=0)
    env_steps: int = Field(gt=0)
    return_mean: float
    ess: float
    lam: float = Field(alias="lambda")
    c: float
    kl_mean: float
    entropy_norm: float
    clip_fraction: float = Field(ge=0, le=1)
    wall_ms: float = 0.0

    def row(self) -> list:
        return [
            self.iteration, self.env_steps, self.return_mean, self.ess, self.lam, self.c,
            self.kl_mean, self.entropy_norm, self.clip_fraction, self.wall_ms,
        ]

class TrainingSummary(BaseModel):
    seed: int
    iterations: int
    env_steps: int
    final_return_mean: float
    completed: bool
    error: Optional[str] = None

class EvaluationRecord(BaseModel):
    seed: int
    episodes: int
    mean_return: float
    std_return: float

# Diagnostics

class Lemma1Row(BaseModel):
    seed: int
    gamma: float
    lhs: float
    rhs: float
    holds: bool
    rhs_reversed: float

class EssDriftRow(BaseModel):
    separation: float
    median_ess: float

class AcerCorrectionRow(BaseModel):
    iteration: int
    c: float
    nonzero_fraction: float
    mean_factor: float

class BiasRow(BaseModel):
    iteration: int
    ess: float
    biased_coefficient: float
    entropy_like_coefficient: float
    biased_term_norm: float
    entropy_like_term_norm: float
    all_clipped: bool

# Persisted artifacts

class ParamsFile(BaseModel):
    version: int = 1
    seed: int
    policy_spec: PolicySpec
    value_spec: MlpSpec
    policy_params: List[float]
    value_params: List[float]

class BufferHeader(BaseModel):
    format: str
    version: int
    capacity: int = Field(gt=0)
    total_stored: int = Field(ge=0)
    segments: int = Field(ge=0)

class TransitionRecord(BaseModel):
    state: List[float]
    action: Union[int, List[float]]
    reward: float
    next_state: List[float]
    terminal: bool
    truncated: bool = False
    log_prob: float
    probs: Optional[List[float]] = None
    mean: Optional[List[float]] = None
    std: Optional[List[float]] = None

class SegmentRecord(BaseModel):
    transitions: List[TransitionRecord]
    collected_returns: Optional[List[float]] = None
