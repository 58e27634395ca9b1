#!/usr/bin/env python3
"""
Static SVG plots for experiment outputs (optional, --plots)
"""

import logging
from pathlib import Path
from typing import Dict, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import OutputError  # noqa: E402

logger = logging.getLogger("flowlab-plots")

# fixed hash salt keeps SVG ids stable between runs
matplotlib.rcParams["svg.hashsalt"] = "flowlab"


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise OutputError(f"cannot write plot {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug(f"wrote {path}")
    return path


def line_plot(path: Union[str, Path], x: Sequence[float], series: Dict[str, Sequence[float]],
              xlabel: str, ylabel: str, title: str = "", loglog: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.asarray(x, dtype=float)
    for label, y in series.items():
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(y) & ((y > 0) if loglog else True)
        ax.plot(x[keep], y[keep], marker="o", label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def heat_map(path: Union[str, Path], s_grid: Sequence[float], t_grid: Sequence[float],
             values: np.ndarray, label: str, title: str = "") -> Path:
    """values[i, j] at (s_grid[i], t_grid[j])"""
    fig, ax = plt.subplots(figsize=(5, 4))
    image = ax.imshow(np.asarray(values, dtype=float).T, origin="lower", aspect="auto",
                      extent=(-0.5, len(s_grid) - 0.5, -0.5, len(t_grid) - 0.5))
    ax.set_xticks(range(len(s_grid)), [f"{s:g}" for s in s_grid])
    ax.set_yticks(range(len(t_grid)), [f"{t:g}" for t in t_grid])
    ax.set_xlabel("s")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.colorbar(image, ax=ax, label=label)
    return _save(fig, path)
