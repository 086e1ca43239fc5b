from typing import Dict, List, Optional, Tuple
import logging

import numpy as np
import pandas as pd
from scipy import stats

from app.models.domain import Capture, SceneModel, UncertaintyMap
from app.models.schemas import AblationArm, FlowErrorRow
from app.services.pvg import classify_static, position_at
from app.services.rasterizer import render, render_labels
from app.services.scene_synth import SceneSynthService

logger = logging.getLogger(__name__)

class AnalyticsService:
    """Service layer for flow/error analysis and report aggregation"""

    @staticmethod
    def flow_error_table(gt_scene: SceneModel, capture: Capture, trained: SceneModel) -> pd.DataFrame:
        """Per-object analytic flow against mean squared error on holdout mid-frames"""
        flows: Dict[int, List[float]] = {}
        errors: Dict[int, List[float]] = {}

        for frame, k in zip(capture.holdout, capture.holdout_brackets):
            per_object_flow = SceneSynthService.gt_flow_magnitude(gt_scene, capture, (k, k + 1))
            rendered = render(trained, frame.camera, frame.timestamp).image
            sq_err = np.sum((rendered - frame.image) ** 2, axis=-1)

            for label in gt_scene.object_ids():
                mask = render_labels(gt_scene, frame.camera, frame.timestamp, label)
                if not mask.any() or label not in per_object_flow:
                    continue
                flows.setdefault(label, []).append(per_object_flow[label])
                errors.setdefault(label, []).append(float(sq_err[mask].mean()))

        rows = [
            FlowErrorRow(
                scene=capture.name,
                object_id=label,
                flow_px=float(np.mean(flows[label])),
                error=float(np.mean(errors[label])),
            ).model_dump()
            for label in sorted(flows)
        ]
        return pd.DataFrame(rows, columns=list(FlowErrorRow.model_fields))

    @staticmethod
    def flow_error_correlation(table: pd.DataFrame) -> Tuple[float, float]:
        """Pearson (r, p) between flow magnitude and error"""
        if len(table) < 3 or table["flow_px"].nunique() < 2 or table["error"].nunique() < 2:
            logger.warning(f"Correlation needs at least 3 distinct objects, got {len(table)}")
            return float("nan"), float("nan")
        result = stats.pearsonr(table["flow_px"], table["error"])
        return float(result[0]), float(result[1])

    @staticmethod
    def top_quartile_error_reduction(baseline: pd.DataFrame, method: pd.DataFrame) -> float:
        """Relative drop of mean error on the objects in the top flow quartile of the baseline table"""
        key = ["scene", "object_id"]
        merged = baseline.merge(method, on=key, suffixes=("_base", "_method"))
        if merged.empty:
            return float("nan")
        cutoff = merged["flow_px_base"].quantile(0.75)
        top = merged[merged["flow_px_base"] >= cutoff]
        base_err = float(top["error_base"].mean())
        if base_err == 0:
            return 0.0
        return 1.0 - float(top["error_method"].mean()) / base_err

    @staticmethod
    def uncertainty_localization(umap: UncertaintyMap, mover_mask: np.ndarray, static_mask: np.ndarray) -> float:
        """Mean beta_e on mover pixels over mean beta_e on static pixels"""
        beta = umap.exposed()
        if not mover_mask.any() or not static_mask.any():
            return float("nan")
        static_mean = float(beta[static_mask].mean())
        if static_mean == 0:
            return float("inf")
        return float(beta[mover_mask].mean()) / static_mean

    @staticmethod
    def static_fraction(gt_scene: SceneModel, trained: SceneModel, threshold: float = 0.5, chunk: int = 512) -> float:
        """Share of trained Gaussians whose nearest GT primitive at their peak time is static that classify static"""
        if gt_scene.labels is None or trained.count == 0:
            return float("nan")
        g = trained.gaussians
        owner = np.empty(trained.count, dtype=np.int64)
        for start in range(0, trained.count, chunk):
            stop = min(start + chunk, trained.count)
            # (chunk, n_gt, 3): GT positions at each trained peak time
            gt_pos = position_at(gt_scene.gaussians, g.tau[start:stop, None], gt_scene.cycle_length)
            dist = np.linalg.norm(gt_pos - g.mu[start:stop, None, :], axis=-1)
            owner[start:stop] = gt_scene.labels[np.argmin(dist, axis=1)]
        static_owned = owner == -1
        if not static_owned.any():
            return float("nan")
        fraction = float(classify_static(g, threshold)[static_owned].mean())
        logger.info(f"{int(static_owned.sum())} Gaussians on static objects, {100 * fraction:.1f}% classify static")
        return fraction

    @staticmethod
    def summarize_ablation(table: pd.DataFrame) -> pd.DataFrame:
        """Mean metrics per arm over scenes, in arm order"""
        order = [arm.value for arm in AblationArm]
        summary = table.groupby("arm", sort=False)[["psnr", "ssim", "gms_ssim_proxy"]].mean().reset_index()
        summary["rank"] = summary["arm"].map({arm: i for i, arm in enumerate(order)})
        return summary.sort_values("rank").drop(columns="rank").reset_index(drop=True)

    @staticmethod
    def ablation_ordering_holds(summary: pd.DataFrame, tolerance: float = 0.0) -> bool:
        values = summary["psnr"].tolist()
        return all(b >= a - tolerance for a, b in zip(values, values[1:]))

    @staticmethod
    def delta_t_trajectories(log: pd.DataFrame, frame_ids: Optional[List[int]] = None) -> pd.DataFrame:
        """Long table (iter, frame_id, s) from the per-frame sigmoid(delta_t) columns of a training log"""
        columns = [c for c in log.columns if c.startswith("s_")]
        if frame_ids is not None:
            columns = [c for c in columns if int(c[2:]) in frame_ids]
        if not columns:
            return pd.DataFrame(columns=["iter", "frame_id", "s"])
        long = log.melt(id_vars=["iter"], value_vars=columns, var_name="frame_id", value_name="s")
        long["frame_id"] = long["frame_id"].str[2:].astype(int)
        return long
