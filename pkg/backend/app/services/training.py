"""
Training loop: photometric reconstruction of the capture plus periodic
distillation of oracle pseudo-frames with joint timestamp optimization.

Everything a step depends on is derived from (seed, iteration), so a run
resumed from a checkpoint reproduces the uninterrupted run bit for bit.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import json
import logging

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from app.core.config import settings
from app.core.errors import NonFiniteGradient, SpecInvalid
from app.models.domain import (
    GAUSSIAN_FIELDS,
    Capture,
    PseudoFrame,
    PVGaussian,
    SceneModel,
    TimestampParam,
    UncertaintyMap,
)
from app.models.schemas import AblationArm, AblationRow, EvalRow, TrainConfig
from app.oracles.base_oracle import BasePseudoFrameOracle
from app.oracles.tasks import generate_pseudo_set
from app.services import storage
from app.services.distill import distill_step
from app.services.metrics import check_shapes, image_metrics, psnr, ssim_with_grad
from app.services.optim import AdamState, adam_step, check_finite, expon_lr
from app.services.pvg import sigmoid
from app.services.rasterizer import (
    box_downsample,
    render_downsampled,
    render_downsampled_backward,
)

logger = logging.getLogger(__name__)

LOG_FILE = "train_log.csv"
# |delta_t| beyond this leaves s within 1e-4 of 0 or 1
SATURATED_DELTA_T = 9.2


def photometric_loss(
    rendered: np.ndarray, gt_image: np.ndarray, l1_w: float = 0.8, ssim_w: float = 0.2
) -> Tuple[float, np.ndarray]:
    """l1_w * L1 + ssim_w * (1 - SSIM) and its gradient w.r.t. the render"""
    check_shapes(rendered, gt_image)
    diff = rendered - gt_image
    l1 = float(np.mean(np.abs(diff)))
    grad = l1_w * np.sign(diff) / diff.size
    loss = l1_w * l1
    if ssim_w > 0:
        s, ds = ssim_with_grad(rendered, gt_image)
        loss += ssim_w * (1.0 - s)
        grad = grad - ssim_w * ds
    return loss, grad


def view_for_iteration(seed: int, iteration: int, n_views: int) -> int:
    epoch, slot = divmod(iteration, n_views)
    return int(np.random.default_rng([seed, epoch]).permutation(n_views)[slot])


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def revisited_points(points: np.ndarray, radius: float) -> np.ndarray:
    """True for sweep points with a neighbour from another sweep time within radius"""
    revisited = np.zeros(len(points), dtype=bool)
    if radius <= 0 or len(points) < 2:
        return revisited
    pairs = cKDTree(points[:, 0:3]).query_pairs(radius, output_type="ndarray").reshape(-1, 2)
    pairs = pairs[points[pairs[:, 0], 6] != points[pairs[:, 1], 6]]
    revisited[pairs.ravel()] = True
    return revisited


@dataclass
class TrainResult:
    scene: SceneModel
    delta_t: np.ndarray
    umaps: Dict[int, UncertaintyMap]
    log: pd.DataFrame
    pseudo: List[PseudoFrame] = field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def s(self) -> np.ndarray:
        return sigmoid(self.delta_t)


class TrainingService:
    """Service layer for training, evaluation and ablation runs"""

    @staticmethod
    def initial_model(
        capture: Capture, config: TrainConfig, cycle_length: float = 0.3, background=(0.0, 0.0, 0.0)
    ) -> SceneModel:
        """One primitive per sweep point, peaking at the point's frame time; re-observed points start static"""
        points = np.asarray(capture.points, dtype=np.float64)
        if points.shape[0] == 0:
            raise SpecInvalid(f"capture '{capture.name}' has no initialization points")
        n = points.shape[0]
        revisited = revisited_points(points, config.revisit_radius)
        logger.debug(f"Initial model: {n} points, {int(revisited.sum())} re-observed at another sweep time")
        gaussians = PVGaussian(
            mu=points[:, 0:3],
            rot=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
            log_scale=np.full((n, 3), np.log(config.initial_scale)),
            opacity_logit=np.full(n, _logit(config.initial_opacity)),
            color=np.clip(points[:, 3:6], 0.0, 1.0),
            velocity=np.zeros((n, 3)),
            tau=points[:, 6].copy(),
            log_beta=np.log(np.where(revisited, config.static_lifespan, config.initial_lifespan)),
        )
        return SceneModel(gaussians=gaussians, cycle_length=cycle_length, background=np.asarray(background))

    @staticmethod
    def evaluate(scene: SceneModel, capture: Capture, factor: int = 1) -> pd.DataFrame:
        """Metrics of every holdout mid-frame at 1/factor resolution"""
        rows = []
        for frame in capture.holdout:
            rendered = render_downsampled(scene, frame.camera, frame.timestamp, factor).image
            metrics = image_metrics(rendered, box_downsample(frame.image, factor))
            rows.append(EvalRow(frame=frame.index, timestamp=frame.timestamp, **metrics).model_dump())
        return pd.DataFrame(rows, columns=list(EvalRow.model_fields))

    @staticmethod
    def holdout_psnr(scene: SceneModel, capture: Capture, factor: int) -> float:
        if not capture.holdout:
            return float("nan")
        values = [
            psnr(
                render_downsampled(scene, f.camera, f.timestamp, factor).image,
                box_downsample(f.image, factor),
            )
            for f in capture.holdout
        ]
        return float(np.mean(values))

    @staticmethod
    def train(
        capture: Capture,
        config: TrainConfig,
        oracle: Optional[BasePseudoFrameOracle] = None,
        seed: int = 0,
        out_dir: Optional[Path] = None,
        resume_from: Optional[Path] = None,
        initial_scene: Optional[SceneModel] = None,
    ) -> TrainResult:
        trainer = _Trainer(capture, config, oracle, seed, out_dir, initial_scene)
        if resume_from is not None:
            trainer.resume(resume_from)
        return trainer.run()

    @staticmethod
    def ablate(
        capture: Capture,
        config: TrainConfig,
        oracle: Optional[BasePseudoFrameOracle],
        arms: Sequence[AblationArm] = tuple(AblationArm),
        seed: int = 0,
        out_dir: Optional[Path] = None,
    ) -> pd.DataFrame:
        """One row per arm, all trained on identical data and seeds"""
        rows = []
        for arm in arms:
            arm = AblationArm(arm)
            arm_dir = Path(out_dir) / arm.name if out_dir else None
            logger.info(f"Ablation arm {arm.value} on '{capture.name}'")
            result = TrainingService.train(capture, config.for_arm(arm), oracle, seed=seed, out_dir=arm_dir)
            metrics = TrainingService.evaluate(result.scene, capture)
            row = AblationRow(
                arm=arm,
                scene=capture.name,
                psnr=float(metrics["psnr"].mean()),
                ssim=float(metrics["ssim"].mean()),
                gms_ssim_proxy=float(metrics["gms_ssim_proxy"].mean()),
            )
            rows.append(row.model_dump(mode="json"))
        return pd.DataFrame(rows, columns=list(AblationRow.model_fields))


class _Trainer:
    """Mutable state of one run; owned by a single thread"""

    def __init__(
        self,
        capture: Capture,
        config: TrainConfig,
        oracle: Optional[BasePseudoFrameOracle],
        seed: int,
        out_dir: Optional[Path],
        initial_scene: Optional[SceneModel],
    ):
        if len(capture.frames) < 2:
            raise SpecInvalid(f"capture '{capture.name}' needs at least 2 training frames")
        self.capture = capture
        self.config = config
        self.oracle = oracle
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir else None
        self.camera = capture.frames[0].camera

        self.scene = initial_scene.copy() if initial_scene is not None else TrainingService.initial_model(capture, config)
        self.adam = AdamState()
        self.n_pairs = len(capture.frames) - 1
        self.delta_t = np.full(self.n_pairs, config.delta_t_init, dtype=np.float64)
        self.umaps: Dict[int, UncertaintyMap] = {}
        self.umap_factor: Optional[int] = None
        self.pseudo: List[PseudoFrame] = []
        self.pseudo_factor: Optional[int] = None
        self.start_iter = 0
        self.rows: List[dict] = []

    @property
    def distilling(self) -> bool:
        return self.config.distill and self.oracle is not None

    # state

    def resume(self, path: Path) -> None:
        ckpt = storage.load_checkpoint(path)
        if ckpt.delta_t.shape[0] != self.n_pairs:
            raise SpecInvalid(f"checkpoint has {ckpt.delta_t.shape[0]} timestamp biases, capture needs {self.n_pairs}")
        self.scene = ckpt.scene
        self.delta_t = ckpt.delta_t.copy()
        self.umaps = ckpt.umaps
        self.umap_factor = ckpt.umap_factor if ckpt.umaps else None
        self.adam = ckpt.adam
        self.start_iter = ckpt.iteration
        if self.out_dir and (self.out_dir / LOG_FILE).exists():
            previous = storage.read_csv(self.out_dir / LOG_FILE)
            self.rows = previous[previous["iter"] < self.start_iter].to_dict("records")
        logger.info(f"Resumed from {path} at iteration {self.start_iter}")

    def _checkpoint(self, iteration: int) -> Optional[Path]:
        if not self.out_dir:
            return None
        path = storage.save_checkpoint(
            self.out_dir / f"ckpt_{iteration:06d}",
            iteration,
            self.scene,
            self.delta_t,
            self.umaps,
            self.umap_factor or 1,
            self.adam,
            self.config,
        )
        storage.write_csv(self.out_dir / LOG_FILE, self._log_frame())
        return path

    def _enter_stage(self, factor: int) -> None:
        if not self.distilling or self.pseudo_factor == factor:
            return
        cache = self.out_dir / "pseudo" if self.out_dir else None
        self.pseudo = generate_pseudo_set(self.oracle, self.capture, factor, cache)
        self.pseudo_factor = factor

        shape = self.pseudo[0].shape
        if self.umaps and self.umap_factor and self.umap_factor != factor:
            ratio = self.umap_factor // factor
            self.umaps = {k: m.upsample(ratio) for k, m in self.umaps.items()}
            for k in self.umaps:
                self.adam.reset_group(f"umap/{k}")
            logger.info(f"Uncertainty maps upsampled x{ratio} to {shape[1]}x{shape[0]}")
        for k in range(self.n_pairs):
            if k not in self.umaps or self.umaps[k].shape != shape:
                self.umaps[k] = UncertaintyMap.constant(k, shape, self.config.frozen_beta)
        self.umap_factor = factor

    # loop

    def run(self) -> TrainResult:
        cfg = self.config
        n_views = len(self.capture.frames)
        last_stage = None
        for it in range(self.start_iter, cfg.total_iters):
            stage = cfg.stage_index(it)
            factor = cfg.factor_at(it)
            if stage != last_stage:
                logger.info(f"Iteration {it}: resolution 1/{factor}")
                last_stage = stage
            self._enter_stage(factor)

            view = view_for_iteration(self.seed, it, n_views)
            row = self._step(it, view, factor)
            self.rows.append(row)

            if (it + 1) % cfg.prune_every == 0:
                self._prune()
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                self._checkpoint(it + 1)

        checkpoint = self._checkpoint(cfg.total_iters)
        return TrainResult(
            scene=self.scene,
            delta_t=self.delta_t.copy(),
            umaps=self.umaps,
            log=self._log_frame(),
            pseudo=self.pseudo,
            checkpoint=checkpoint,
        )

    def _step(self, it: int, view: int, factor: int) -> dict:
        cfg = self.config
        frame = self.capture.frames[view]
        gt = box_downsample(frame.image, factor)
        out = render_downsampled(self.scene, frame.camera, frame.timestamp, factor)
        photo, g_img = photometric_loss(out.image, gt, cfg.l1_w, cfg.ssim_w)
        grads = render_downsampled_backward(self.scene, frame.camera, frame.timestamp, factor, g_img)

        distill_loss = tv_loss = float("nan")
        extra_params: Dict[str, np.ndarray] = {}
        extra_grads: Dict[str, np.ndarray] = {}
        if self.distilling and it % cfg.distill_period == 0:
            j = (it // cfg.distill_period) % len(self.pseudo)
            result = distill_step(
                self.scene,
                self.camera,
                self.capture.pose_pair(j),
                TimestampParam(base_index=j, delta_t=float(self.delta_t[j])),
                self.pseudo[j],
                self.umaps[j],
                cfg.weights,
            )
            grads.add_(result.scene_grads)
            distill_loss, tv_loss = result.ca_loss, result.tv_loss
            if cfg.optimize_delta_t:
                extra_params[f"delta_t/{j}"] = self.delta_t[j : j + 1]
                extra_grads[f"delta_t/{j}"] = np.array([result.delta_t_grad])
            if cfg.learn_umap:
                extra_params[f"umap/{j}"] = self.umaps[j].values
                extra_grads[f"umap/{j}"] = result.umap_grad

        params = self.scene.gaussians.params()
        scene_grads = {name: getattr(grads.gaussians, name) for name in GAUSSIAN_FIELDS}
        try:
            check_finite({**scene_grads, **extra_grads})
        except NonFiniteGradient as e:
            e.dump_path = self._dump(it, view, e.group)
            logger.error(f"Iteration {it} (seed {self.seed}, view {view}): {e.detail}; dump at {e.dump_path}")
            raise

        lr = cfg.lr
        rates = {
            "mu": expon_lr(it, lr.mu, lr.mu_final, cfg.total_iters),
            "rot": lr.rot,
            "log_scale": lr.log_scale,
            "opacity_logit": lr.opacity_logit,
            "color": lr.color,
            "velocity": lr.velocity,
            "tau": lr.tau,
            "log_beta": lr.log_beta,
        }
        adam_step(self.adam, params, scene_grads, rates)
        if extra_grads:
            extra_rates = {name: lr.delta_t if name.startswith("delta_t") else lr.umap for name in extra_grads}
            adam_step(self.adam, extra_params, extra_grads, extra_rates)
            self._warn_saturated(extra_params)

        row = {
            "iter": it,
            "view_id": view,
            "factor": factor,
            "photo_loss": photo,
            "distill_loss": distill_loss,
            "tv_loss": tv_loss,
            "psnr_holdout": float("nan"),
            "n_gaussians": self.scene.count,
        }
        if (it + 1) % cfg.holdout_every == 0 or it + 1 == cfg.total_iters:
            row["psnr_holdout"] = TrainingService.holdout_psnr(self.scene, self.capture, factor)
            logger.info(f"Iteration {it + 1}: holdout PSNR {row['psnr_holdout']:.2f} dB at 1/{factor}")
        for k, s in enumerate(sigmoid(self.delta_t)):
            row[f"s_{k:02d}"] = float(s)
        return row

    def _warn_saturated(self, updated: Dict[str, np.ndarray]) -> None:
        for name in updated:
            kind, k = name.split("/")
            if kind == "umap":
                clamped = int(np.count_nonzero(self.umaps[int(k)].exposed() >= settings.BETA_CLAMP))
                if clamped:
                    logger.warning(f"Uncertainty map {k}: {clamped} pixels at the beta clamp ({settings.BETA_CLAMP:g})")
            elif abs(self.delta_t[int(k)]) > SATURATED_DELTA_T:
                logger.warning(f"Timestamp bias {k} saturated: s = {float(sigmoid(self.delta_t[int(k)])):.6f}")

    def _prune(self) -> None:
        keep = sigmoid(self.scene.gaussians.opacity_logit) >= self.config.prune_threshold
        removed = int((~keep).sum())
        if removed == 0:
            return
        self.scene = self.scene.select(np.nonzero(keep)[0])
        self.adam.prune_rows(keep, GAUSSIAN_FIELDS)
        logger.info(f"Pruned {removed} Gaussians, {self.scene.count} remain")

    def _dump(self, it: int, view: int, group: Optional[str]) -> Optional[str]:
        if not self.out_dir:
            return None
        path = self.out_dir / f"nonfinite_{it:06d}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"iteration": it, "seed": self.seed, "view_id": view, "group": group}, indent=2))
        return str(path)

    def _log_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)
