from typing import Optional, Tuple
import logging

import numpy as np
from scipy import ndimage

from app.models.domain import Camera, OracleMeta, Pose, PosePair, PseudoFrame, SceneModel
from app.models.schemas import OracleConfig
from app.oracles.base_oracle import BasePseudoFrameOracle
from app.services.geometry import quat_from_axis_angle, quat_multiply
from app.services.pose_interp import interp_pose_at
from app.services.rasterizer import render_downsampled
from app.services.scene_synth import SceneSynthService

logger = logging.getLogger(__name__)

class SyntheticOracle(BasePseudoFrameOracle):
    """
    Pseudo-frames rendered from the ground-truth scene
    Bias: the frame sits at hidden_s inside the bracket instead of the midpoint
    Corruptions: pose jitter, colour noise, local warps and blur on movers
    """

    def __init__(self, gt_scene: SceneModel, config: OracleConfig, seed: int = 0):
        super().__init__(config, seed)
        self._gt = gt_scene

    def generate_pseudo(
        self,
        bracket: Tuple[int, int],
        pair: PosePair,
        camera: Camera,
        factor: int = 1,
        frame_id: Optional[int] = None,
        cfg: Optional[OracleConfig] = None,
    ) -> PseudoFrame:
        cfg = cfg or self.config
        frame_id = bracket[0] if frame_id is None else frame_id
        rng = self._rng(frame_id, factor)

        pose, t = interp_pose_at(pair, cfg.hidden_s)
        pose = self._jitter(pose, cfg, rng)
        cam = camera.with_pose(pose)
        image = render_downsampled(self._gt, cam, t, factor).image
        error_mask = np.zeros(image.shape[:2], dtype=bool)

        if not cfg.is_clean:
            image, error_mask = self._corrupt(image, cam.scaled(factor), t, factor, cfg, rng)

        self.generated += 1
        return PseudoFrame(
            image=image,
            bracket=tuple(bracket),
            frame_id=frame_id,
            factor=factor,
            meta=OracleMeta(hidden_s=cfg.hidden_s, config=cfg, error_mask=error_mask),
        )

    def _jitter(self, pose: Pose, cfg: OracleConfig, rng: np.random.Generator) -> Pose:
        if cfg.pose_jitter_rot == 0 and cfg.pose_jitter_trans == 0:
            return pose
        axis = rng.normal(size=3)
        dq = quat_from_axis_angle(axis, rng.normal(scale=cfg.pose_jitter_rot))
        return Pose(
            rotation=quat_multiply(dq, pose.rotation),
            translation=pose.translation + rng.normal(scale=cfg.pose_jitter_trans, size=3),
        )

    def _corrupt(
        self, image: np.ndarray, cam: Camera, t: float, factor: int, cfg: OracleConfig, rng: np.random.Generator
    ):
        H, W = image.shape[:2]
        mask = np.zeros((H, W), dtype=bool)
        out = image.copy()

        if cfg.mover_warp_px > 0 or cfg.mover_blur_sigma > 0:
            for label, cover in SceneSynthService.object_masks(self._gt, cam, t).items():
                if not cover.any():
                    continue
                region = ndimage.binary_dilation(cover, iterations=max(1, int(np.ceil(cfg.mover_warp_px / factor))))
                if cfg.mover_warp_px > 0:
                    angle = rng.uniform(0.0, 2.0 * np.pi)
                    shift = cfg.mover_warp_px / factor
                    out = _warp_region(out, region, shift * np.cos(angle), shift * np.sin(angle))
                if cfg.mover_blur_sigma > 0:
                    sigma = cfg.mover_blur_sigma / factor
                    blurred = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0.0), mode="nearest")
                    out = np.where(region[..., None], blurred, out)
                mask |= region

        for patch in cfg.warp_patches:
            region = np.zeros((H, W), dtype=bool)
            r0, r1 = int(np.floor(patch.y0 * H)), int(np.ceil(patch.y1 * H))
            c0, c1 = int(np.floor(patch.x0 * W)), int(np.ceil(patch.x1 * W))
            region[r0:r1, c0:c1] = True
            out = _warp_region(out, region, patch.dx / factor, patch.dy / factor)
            mask |= region

        if cfg.color_noise_sigma > 0:
            out = out + rng.normal(scale=cfg.color_noise_sigma, size=out.shape)
        return np.clip(out, 0.0, 1.0), mask


def _warp_region(image: np.ndarray, region: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Content inside region shifted by (dx, dy) pixels, bilinear"""
    H, W = region.shape
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    coords = [rows - dy, cols - dx]
    warped = np.stack(
        [ndimage.map_coordinates(image[..., c], coords, order=1, mode="nearest") for c in range(image.shape[-1])],
        axis=-1,
    )
    return np.where(region[..., None], warped, image)
