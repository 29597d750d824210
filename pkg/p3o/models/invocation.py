from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from p3o.models.enums import DiagTarget, Subcommand

class CliInvocation(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    config_path: Optional[Path] = None
    output_dir: Path = Path("runs")
    seed: Optional[int] = None

    # Flag overrides applied on top of the config file
    no_gae: bool = False
    lam: Optional[float] = None
    c: Optional[float] = None
    m: Optional[float] = None
    nu: Optional[float] = None
    rollout_steps: Optional[int] = Field(default=None, gt=0)
    total_steps: Optional[int] = Field(default=None, gt=0)

    # train / eval
    plot: bool = False
    params_path: Optional[Path] = None
    episodes: int = Field(default=100, gt=0)

    dump_replay: bool = False

    # diag
    diag_target: Optional[DiagTarget] = None
    trials: int = Field(default=200, gt=0)
    lag: int = Field(default=50, gt=0)
