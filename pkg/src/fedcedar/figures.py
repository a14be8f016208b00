"""Figure rendering for the CLI report path.

Every figure lands next to the delimited output as a PNG; the CSV remains the
primary machine-readable artifact and none of the library code depends on
this module.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import RoundRecord


def accuracy_figure(records: Sequence[RoundRecord], path: str | Path) -> Path:
    """Mean accuracy over communication rounds."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.round_index for r in records], [r.mean_accuracy for r in records])
    ax.set_xlabel("communication round")
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def rand_index_figure(records: Sequence[RoundRecord], path: str | Path) -> Path:
    """Rand-index trace at the tracked rounds."""
    points = [(r.round_index, r.rand_index) for r in records if r.rand_index is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if points:
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", markersize=3)
    ax.set_xlabel("communication round")
    ax.set_ylabel("Rand index")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def compare_figure(
    runs: Mapping[str, Sequence[RoundRecord]], path: str | Path
) -> Path:
    """Overlayed mean-accuracy curves for several runs."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, records in runs.items():
        ax.plot(
            [r.round_index for r in records],
            [r.mean_accuracy for r in records],
            label=label,
        )
    ax.set_xlabel("communication round")
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def sweep_figure(
    final_accuracy: Mapping[tuple[int, int], float], path: str | Path
) -> Path:
    """Heatmap of final mean accuracy over the (depth, clusters) grid."""
    depths = sorted({p for p, _ in final_accuracy})
    clusters = sorted({k for _, k in final_accuracy})
    grid = [[final_accuracy[(p, k)] for k in clusters] for p in depths]

    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(clusters)), [str(k) for k in clusters])
    ax.set_yticks(range(len(depths)), [str(p) for p in depths])
    ax.set_xlabel("cluster count K")
    ax.set_ylabel("propagation depth P")
    for i, p in enumerate(depths):
        for j, k in enumerate(clusters):
            ax.text(
                j, i, f"{final_accuracy[(p, k)]:.3f}",
                ha="center", va="center", color="white", fontsize=8,
            )
    fig.colorbar(image, ax=ax, label="final mean accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
