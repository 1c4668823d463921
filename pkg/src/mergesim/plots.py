"""Figure rendering for the report paths (histograms, training curves).

Everything renders straight to image files next to the delimited outputs;
there is no interactive display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .tracestats import Distribution  # noqa: E402

_UNITS = {
    "headway": "headway [m]",
    "velocity": "velocity [m/s]",
    "acceleration": "acceleration [m/s^2]",
    "population": "vehicles per frame",
}


def save_histogram_figure(dist: Distribution, title: str, path) -> Path:
    """Render one distribution as a bar histogram annotated with its moments."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    widths = dist.edges[1:] - dist.edges[:-1]
    ax.bar(dist.edges[:-1], dist.counts, width=widths, align="edge",
           color="tab:blue", edgecolor="white")
    ax.set_xlabel(_UNITS.get(dist.quantity, dist.quantity))
    ax.set_ylabel("count")
    m = dist.moments
    if m.count:
        ax.set_title(f"{title}  (mean {m.mean:.2f}, std {m.std:.2f}, n={m.count})",
                     fontsize=10)
    else:
        ax.set_title(f"{title}  (no samples)", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_training_curve(records: list[dict], path, window: int = 50) -> Path:
    """Episode reward curve with a moving average, from training-log records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    episodes = [r["episode"] for r in records]
    rewards = [r["reward"] for r in records]
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    ax.plot(episodes, rewards, lw=0.6, alpha=0.45, label="episode reward")
    if len(rewards) >= window:
        avg = [sum(rewards[max(0, i - window + 1):i + 1]) /
               len(rewards[max(0, i - window + 1):i + 1]) for i in range(len(rewards))]
        ax.plot(episodes, avg, lw=1.6, color="tab:red", label=f"{window}-episode mean")
    ax.set_xlabel("episode")
    ax.set_ylabel("reward")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
