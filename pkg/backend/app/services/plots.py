"""Report figures rendered off-screen to PNG"""

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

PathLike = Union[str, Path]


def _save(fig, save_path: PathLike) -> Path:
    save_path = Path(save_path)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(save_path, dpi=150)
    plt.close(fig)
    return save_path


def flow_error_scatter(table: pd.DataFrame, save_path: PathLike, r: Optional[float] = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for scene, group in table.groupby("scene"):
        ax.scatter(group["flow_px"], group["error"], label=scene, s=28)
    ax.set_xlabel("analytic flow magnitude (px / frame)")
    ax.set_ylabel("holdout mid-frame error (MSE)")
    title = "Flow vs. mid-frame error"
    if r is not None and np.isfinite(r):
        title += f" (Pearson r = {r:.2f})"
    ax.set_title(title)
    if table["scene"].nunique() <= 8:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, save_path)


def delta_t_curves(trajectories: pd.DataFrame, save_path: PathLike, hidden_s: Optional[float] = None) -> Path:
    """sigmoid(delta_t) per pseudo-frame against training iteration"""
    fig, ax = plt.subplots(figsize=(6, 4))
    for frame_id, group in trajectories.groupby("frame_id"):
        ax.plot(group["iter"], group["s"], lw=1.0, label=f"frame {frame_id}")
    if hidden_s is not None:
        ax.axhline(hidden_s, color="k", ls="--", lw=1.0, label="oracle hidden s")
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("sigmoid(delta_t)")
    if trajectories["frame_id"].nunique() <= 8:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, save_path)


def slerp_deviation_plot(curve: pd.DataFrame, save_path: PathLike) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(curve["angle_deg"], curve["max_deviation"], marker="o")
    ax.set_xlabel("rotation between endpoints (deg)")
    ax.set_ylabel("max |lerp - slerp|")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, save_path)
