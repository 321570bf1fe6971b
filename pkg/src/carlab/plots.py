"""Matplotlib rendering of report figures to SVG files.

Every figure written here has a delimited companion (CSV) produced by the
caller; the SVG is presentation only. Heatmap cells are drawn as individual
vector rectangles tagged with ids so their fills stay inspectable in tests.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import LinearSegmentedColormap
from matplotlib.patches import Rectangle

__all__ = ["heatmap_colors", "render_heatmap", "render_line_plot"]

# light gray at zero ramping linearly to saturated red at the maximum
_RAMP = LinearSegmentedColormap.from_list("gray_red", ["#ededed", "#c40000"])

_SVG_META = {"Date": None}


def heatmap_colors(values: np.ndarray, vmax: float) -> np.ndarray:
    """Hex fill per cell under the gray-to-red ramp over [0, vmax]."""
    if vmax > 0:
        scaled = np.clip(values / vmax, 0.0, 1.0)
    else:
        scaled = np.zeros_like(values)
    return np.array(
        [[matplotlib.colors.to_hex(_RAMP(x)) for x in row] for row in scaled]
    )


def render_heatmap(values: np.ndarray, class_ids, path, title: str | None = None) -> None:
    """Square cell grid with a scale legend showing the maximum entry."""
    n = values.shape[0]
    vmax = float(values.max()) if values.size else 0.0
    colors = heatmap_colors(values, vmax)
    fig, ax = plt.subplots(figsize=(0.55 * n + 2.2, 0.55 * n + 1.2))
    for i in range(n):
        for j in range(n):
            ax.add_patch(
                Rectangle(
                    (j, n - 1 - i),
                    1.0,
                    1.0,
                    facecolor=colors[i, j],
                    edgecolor="white",
                    linewidth=0.6,
                    gid=f"cell-{i}-{j}",
                )
            )
    ax.set_xlim(0, n)
    ax.set_ylim(0, n)
    ax.set_xticks(np.arange(n) + 0.5)
    ax.set_xticklabels([str(c) for c in class_ids], fontsize=8)
    ax.set_yticks(np.arange(n) + 0.5)
    ax.set_yticklabels([str(c) for c in reversed(list(class_ids))], fontsize=8)
    ax.set_xlabel("true class")
    ax.set_ylabel("predicted class")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    sm = plt.cm.ScalarMappable(
        cmap=_RAMP, norm=matplotlib.colors.Normalize(vmin=0.0, vmax=max(vmax, 1e-12))
    )
    cbar = fig.colorbar(sm, ax=ax, fraction=0.046, pad=0.04)
    cbar.set_label(f"rate (max {vmax:.3g})")
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)


def render_line_plot(x, y, xlabel: str, ylabel: str, path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(x, y, marker="o", linewidth=1.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)
