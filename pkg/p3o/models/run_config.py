from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from p3o.models.enums import Activation, AdvantageSource, Algorithm, KlDirection, Preset

class ChainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["chain"] = "chain"
    length: int = Field(default=5, ge=2)
    horizon: int = Field(default=20, gt=0)
    goal_reward: float = 1.0
    step_cost: float = Field(default=0.01, ge=0)
    slip: float = Field(default=0.0, ge=0, lt=1, description="Probability the opposite move is executed")

class GridworldConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["gridworld"] = "gridworld"
    rows: int = Field(default=4, gt=0)
    cols: int = Field(default=4, gt=0)
    horizon: int = Field(default=50, gt=0)
    goal_reward: float = 1.0
    step_cost: float = Field(default=0.01, ge=0)
    slip: float = Field(default=0.0, ge=0, lt=1, description="Probability a uniformly random move replaces the chosen one")
    start: Tuple[int, int] = (0, 0)
    goal: Optional[Tuple[int, int]] = None  # bottom-right corner when omitted
    walls: List[Tuple[int, int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_cells(self) -> "GridworldConfig":
        goal = self.goal or (self.rows - 1, self.cols - 1)

        for cell in [self.start, goal, *self.walls]:
            if not (0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols):
                raise ValueError(f"cell {cell} lies outside the {self.rows}x{self.cols} grid")

        if self.start in self.walls or goal in self.walls:
            raise ValueError("start and goal cells cannot be walls")
        if self.start == goal:
            raise ValueError("start and goal cells must differ")

        return self

class PointMassConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["point_mass"] = "point_mass"
    dim: int = Field(default=2, gt=0)
    horizon: int = Field(default=64, gt=0)
    goal: Optional[List[float]] = None  # origin when omitted
    start_range: float = Field(default=1.0, ge=0)
    step_size: float = Field(default=0.1, gt=0)
    damping: float = Field(default=0.0, ge=0, lt=1)

    @model_validator(mode="after")
    def check_goal(self) -> "PointMassConfig":
        if self.goal is not None and len(self.goal) != self.dim:
            raise ValueError(f"goal must have {self.dim} coordinates")

        return self

EnvConfig = Annotated[Union[ChainConfig, GridworldConfig, PointMassConfig], Field(discriminator="name")]

# Desk-scale Atari and MuJoCo hyper-parameter tables. Unspecified keys of a config
# file fall back to the table of its preset.
ATARI_DEFAULTS = {
    "K": 16,
    "T": 16,
    "learning_rate": 7e-4,
    "buffer_capacity": 50_000,
    "entropy_coef": 0.01,
    "m": 2.0,
    "burn_in": 15_000,
    "minibatch_segments": 6,
    "hidden_sizes": [64],
    "seeds": [0, 1, 2],
}

MUJOCO_DEFAULTS = {
    "K": 2,
    "T": 64,
    "learning_rate": 3e-4,
    "buffer_capacity": 5_000,
    "entropy_coef": 0.0,
    "m": 3.0,
    "burn_in": 2_500,
    "minibatch_segments": 15,
    "hidden_sizes": [100, 100],
    "seeds": list(range(10)),
}

PRESETS = {Preset.ATARI: ATARI_DEFAULTS, Preset.MUJOCO: MUJOCO_DEFAULTS}

class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    preset: Preset = Preset.ATARI
    algorithm: Algorithm = Algorithm.P3O
    env: EnvConfig = Field(default_factory=ChainConfig)

    num_envs: int = Field(alias="K", gt=0)
    rollout_steps: int = Field(alias="T", gt=0)
    gamma: float = Field(default=0.99, ge=0, lt=1)
    tau: float = Field(default=0.95, ge=0, le=1)
    use_gae: bool = True
    m: float = Field(ge=0, description="Mean of the Poisson off-policy update count")
    buffer_capacity: int = Field(gt=0, description="Replay capacity in transitions")
    burn_in: int = Field(ge=0)
    minibatch_segments: int = Field(gt=0)
    learning_rate: float = Field(gt=0)
    value_learning_rate: Optional[float] = Field(default=None, gt=0)
    entropy_coef: float = Field(ge=0)
    value_coef: float = Field(default=0.5, ge=0)
    clip_norm: float = Field(default=0.5, gt=0)
    total_steps: int = Field(default=200_000, gt=0)
    seeds: List[int] = Field(min_length=1)

    hidden_sizes: List[int]
    activation: Activation = Activation.TANH

    lam: Optional[float] = Field(default=None, alias="lambda", ge=0, le=1)
    c: Optional[float] = Field(default=None, gt=0)
    nu: Optional[float] = Field(default=None, ge=0, le=1)

    kl_direction: KlDirection = KlDirection.BEHAVIOR_TARGET
    advantage_source: AdvantageSource = AdvantageSource.RECOMPUTE
    normalize_advantages: bool = True
    ratio_cap: float = Field(default=1e6, gt=1)
    record_wall_time: bool = False
    log_interval: int = Field(default=10, gt=0)

    @model_validator(mode="before")
    @classmethod
    def fill_preset(cls, data):
        if not isinstance(data, dict):
            return data

        preset = Preset(data.get("preset", Preset.ATARI))
        field_names = {"K": "num_envs", "T": "rollout_steps"}

        for key, value in PRESETS[preset].items():
            if key not in data and field_names.get(key) not in data:
                data = {**data, key: value}

        return data

    @model_validator(mode="after")
    def check_overrides(self) -> "RunConfig":
        if any(size <= 0 for size in self.hidden_sizes):
            raise ValueError("hidden_sizes must be positive")

        if self.lam is not None and self.algorithm != Algorithm.FIXED_COEFF_P3O:
            raise ValueError("lambda override is only legal for algorithm fixed_coeff_p3o")
        if self.c is not None and self.algorithm not in (Algorithm.FIXED_COEFF_P3O, Algorithm.IPG_FIXED_NU):
            raise ValueError("c override is only legal for fixed_coeff_p3o or ipg_fixed_nu")
        if self.algorithm == Algorithm.IPG_FIXED_NU and self.nu is None:
            raise ValueError("algorithm ipg_fixed_nu requires nu")
        if self.nu is not None and self.algorithm != Algorithm.IPG_FIXED_NU:
            raise ValueError("nu override is only legal for algorithm ipg_fixed_nu")

        return self

    @property
    def effective_tau(self) -> float:
        """``use_gae=False`` falls back to bootstrapped n-step returns (tau = 1)."""
        return self.tau if self.use_gae else 1.0

    @property
    def uses_replay(self) -> bool:
        return self.algorithm != Algorithm.ON_POLICY_ONLY
