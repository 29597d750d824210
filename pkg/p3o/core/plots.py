"""Static SVG figures of a training run."""
import logging
from pathlib import Path
from typing import Dict, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from p3o.models.records import MetricsRecord  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "p3o"

TELEMETRY_PANELS = [
    ("ess", "ESS"),
    ("lam", "lambda"),
    ("kl_mean", "KL(beta || pi)"),
    ("entropy_norm", "normalized entropy"),
]


def _save(fig, path: Union[str, Path]) -> None:
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    logger.debug("figure written to %s", path)


def plot_returns(runs: Dict[int, Sequence[MetricsRecord]], path: Union[str, Path], title: str = "") -> None:
    """Trailing mean episode return against environment steps, one line per seed."""
    fig, ax = plt.subplots(figsize=(6, 4))

    for seed, records in sorted(runs.items()):
        ax.plot([r.env_steps for r in records], [r.return_mean for r in records], label=f"seed {seed}", linewidth=1)

    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean return (last 100 episodes)")
    ax.set_title(title)
    ax.grid(alpha=0.3)

    if runs:
        ax.legend(fontsize="small")

    _save(fig, path)


def plot_telemetry(records: Sequence[MetricsRecord], path: Union[str, Path], title: str = "") -> None:
    """ESS, lambda, KL penalty and entropy against iteration."""
    fig, axes = plt.subplots(len(TELEMETRY_PANELS), 1, figsize=(6, 8), sharex=True)
    iterations = [r.iteration for r in records]

    for ax, (name, label) in zip(axes, TELEMETRY_PANELS):
        ax.plot(iterations, [getattr(r, name) for r in records], linewidth=1)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)

    axes[0].set_title(title)
    axes[-1].set_xlabel("iteration")

    _save(fig, path)
