import logging
from pathlib import Path
from typing import Sequence, Tuple

import matplotlib
matplotlib.use("Agg")  # no display on compute nodes
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)


def plot_png(branches: Sequence, path: Path, resolution: Tuple[int, int] = (1200, 800)) -> Path:
    """Projected branches (lambda, ||u||_inf), one colour per eps level"""
    fig = plt.figure(figsize=(resolution[0] / 100, resolution[1] / 100), dpi=100)
    ax = fig.add_subplot(111)
    colors = plt.cm.viridis(np.linspace(0.0, 0.9, max(len(branches), 1)))
    for br, color in zip(branches, colors):
        proj = br.projection()
        ax.plot(proj[:, 0], proj[:, 1], color=color, lw=1.2, label=f"eps={br.eps:g} ({br.side})")
        turning = np.array([[p.lam, p.norm_inf] for p in br.turning_points]).reshape(-1, 2)
        if turning.size:
            ax.plot(turning[:, 0], turning[:, 1], "o", color=color, ms=3)
    ax.axvline(0.0, color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("lambda")
    ax.set_ylabel("||u||_inf")
    ax.set_title("Bifurcation diagram")
    ax.legend(loc="best", fontsize=8)
    plt.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    logger.debug(f"Rendered {len(branches)} branch(es) to {path}")
    return path
