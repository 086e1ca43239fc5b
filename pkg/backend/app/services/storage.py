"""
On-disk formats: captures, ground-truth scenes, checkpoints, pseudo-frame
caches, uncertainty exports, CSV logs and experiment configs.

Capture directory:

    capture.json   CaptureRecord (intrinsics, per-frame quaternion + centre, timestamps)
    frames/NNNN.png, holdout/NNNN.png
    points.txt     one sweep point per line: x y z r g b t
    gt_scene.npz   ground-truth primitives (oracle only, never read by training)

Checkpoint: <name>.npz with the arrays and <name>.json with CheckpointMeta.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import json
import logging

import numpy as np
import pandas as pd
from PIL import Image
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import CheckpointError, ConfigError
from app.models.domain import (
    GAUSSIAN_FIELDS,
    Camera,
    Capture,
    Frame,
    OracleMeta,
    Pose,
    PseudoFrame,
    PVGaussian,
    SceneModel,
    UncertaintyMap,
)
from app.models.schemas import (
    CaptureRecord,
    CheckpointMeta,
    ExperimentConfig,
    FrameRecord,
    OracleConfig,
    PseudoRecord,
    TrainConfig,
)
from app.services.optim import AdamState

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CSV_FLOAT_FORMAT = "%.17g"


# Images

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: PathLike, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)


def load_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


# Scenes

def save_scene(path: PathLike, scene: SceneModel) -> None:
    arrays = {name: getattr(scene.gaussians, name) for name in GAUSSIAN_FIELDS}
    arrays["cycle_length"] = np.array(scene.cycle_length)
    arrays["background"] = scene.background
    if scene.labels is not None:
        arrays["labels"] = scene.labels
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def _scene_from_arrays(arrays, prefix: str = "") -> SceneModel:
    gaussians = PVGaussian(**{name: np.array(arrays[prefix + name]) for name in GAUSSIAN_FIELDS})
    labels = np.array(arrays[prefix + "labels"]) if prefix + "labels" in arrays else None
    return SceneModel(
        gaussians=gaussians,
        cycle_length=float(arrays[prefix + "cycle_length"]),
        background=np.array(arrays[prefix + "background"]),
        labels=labels,
    )


def load_scene(path: PathLike) -> SceneModel:
    with np.load(path) as data:
        return _scene_from_arrays(data)


# Captures

def _frame_record(frame: Frame, folder: str) -> FrameRecord:
    return FrameRecord(
        index=frame.index,
        file=f"{folder}/{frame.index:04d}.png",
        timestamp=frame.timestamp,
        rotation=tuple(float(v) for v in frame.camera.pose.rotation),
        translation=tuple(float(v) for v in frame.camera.pose.translation),
    )


def save_capture(directory: PathLike, capture: Capture, gt_scene: Optional[SceneModel] = None) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    if not capture.frames:
        raise CheckpointError("cannot save a capture without frames")
    cam = capture.frames[0].camera

    for frame in capture.frames:
        save_png(root / "frames" / f"{frame.index:04d}.png", frame.image)
    for frame in capture.holdout:
        save_png(root / "holdout" / f"{frame.index:04d}.png", frame.image)

    record = CaptureRecord(
        name=capture.name,
        width=cam.width,
        height=cam.height,
        fx=cam.fx,
        fy=cam.fy,
        cx=cam.cx,
        cy=cam.cy,
        frames=[_frame_record(f, "frames") for f in capture.frames],
        holdout=[_frame_record(f, "holdout") for f in capture.holdout],
        holdout_brackets=list(capture.holdout_brackets),
        object_ids=gt_scene.object_ids() if gt_scene is not None else [],
    )
    (root / "capture.json").write_text(record.model_dump_json(indent=2))
    np.savetxt(root / "points.txt", capture.points, fmt="%.9g", header="x y z r g b t")
    if gt_scene is not None:
        save_scene(root / "gt_scene.npz", gt_scene)
    logger.info(f"Wrote capture '{capture.name}' to {root}")
    return root


def _frame_from_record(root: Path, rec: FrameRecord, record: CaptureRecord) -> Frame:
    camera = Camera(
        pose=Pose(rotation=rec.rotation, translation=rec.translation),
        fx=record.fx,
        fy=record.fy,
        cx=record.cx,
        cy=record.cy,
        width=record.width,
        height=record.height,
    )
    return Frame(index=rec.index, image=load_png(root / rec.file), camera=camera, timestamp=rec.timestamp)


def load_capture(directory: PathLike) -> Capture:
    root = Path(directory)
    meta_path = root / "capture.json"
    if not meta_path.exists():
        raise ConfigError("capture metadata not found", path=str(meta_path))
    try:
        record = CaptureRecord.model_validate_json(meta_path.read_text())
    except ValidationError as e:
        raise _validation_to_config_error(e, str(meta_path)) from e

    points_path = root / "points.txt"
    points = np.loadtxt(points_path, ndmin=2) if points_path.exists() else np.zeros((0, 7))
    if points.size == 0:
        points = np.zeros((0, 7))
    return Capture(
        name=record.name,
        frames=[_frame_from_record(root, rec, record) for rec in record.frames],
        holdout=[_frame_from_record(root, rec, record) for rec in record.holdout],
        points=points,
        holdout_brackets=list(record.holdout_brackets),
    )


def load_gt_scene(directory: PathLike) -> SceneModel:
    path = Path(directory) / "gt_scene.npz"
    if not path.exists():
        raise ConfigError("ground-truth scene not found (needed by the synthetic oracle)", path=str(path))
    return load_scene(path)


# Checkpoints

@dataclass
class CheckpointData:
    iteration: int
    scene: SceneModel
    delta_t: np.ndarray
    umaps: Dict[int, UncertaintyMap]
    umap_factor: int
    adam: AdamState
    config: TrainConfig


def save_checkpoint(
    path: PathLike,
    iteration: int,
    scene: SceneModel,
    delta_t: np.ndarray,
    umaps: Dict[int, UncertaintyMap],
    umap_factor: int,
    adam: AdamState,
    config: TrainConfig,
) -> Path:
    base = Path(path).with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"scene/{name}": getattr(scene.gaussians, name) for name in GAUSSIAN_FIELDS}
    arrays["scene/cycle_length"] = np.array(scene.cycle_length)
    arrays["scene/background"] = scene.background
    arrays["delta_t"] = np.asarray(delta_t, dtype=np.float64)
    for frame_id, umap in umaps.items():
        arrays[f"umap/{frame_id}"] = umap.values
    arrays.update(adam.to_arrays())
    np.savez(base.with_suffix(".npz"), **arrays)

    meta = CheckpointMeta(
        version=settings.CHECKPOINT_VERSION,
        iteration=iteration,
        cycle_length=scene.cycle_length,
        background=tuple(float(v) for v in scene.background),
        delta_t=[float(v) for v in delta_t],
        umap_frame_ids=sorted(umaps),
        umap_factor=umap_factor,
        adam_steps=dict(adam.steps),
        config=config,
    )
    base.with_suffix(".json").write_text(meta.model_dump_json(indent=2))
    logger.info(f"Checkpoint at iteration {iteration} written to {base}.npz")
    return base.with_suffix(".npz")


def load_checkpoint(path: PathLike) -> CheckpointData:
    base = Path(path).with_suffix("")
    npz_path, json_path = base.with_suffix(".npz"), base.with_suffix(".json")
    if not npz_path.exists() or not json_path.exists():
        raise CheckpointError(f"checkpoint {base} is incomplete (need .npz and .json)")
    try:
        meta = CheckpointMeta.model_validate_json(json_path.read_text())
    except ValidationError as e:
        raise CheckpointError(f"{json_path}: invalid checkpoint metadata: {e.errors()[0]['msg']}") from e
    if meta.version != settings.CHECKPOINT_VERSION:
        raise CheckpointError(f"{json_path}: version {meta.version}, expected {settings.CHECKPOINT_VERSION}")

    with np.load(npz_path) as data:
        arrays = {key: np.array(data[key]) for key in data.files}
    scene = _scene_from_arrays(arrays, prefix="scene/")
    umaps = {fid: UncertaintyMap(values=arrays[f"umap/{fid}"], frame_id=fid) for fid in meta.umap_frame_ids}
    return CheckpointData(
        iteration=meta.iteration,
        scene=scene,
        delta_t=arrays["delta_t"],
        umaps=umaps,
        umap_factor=meta.umap_factor,
        adam=AdamState.from_arrays(arrays, meta.adam_steps),
        config=meta.config,
    )


# Pseudo-frame cache

def save_pseudo(directory: PathLike, pseudo: PseudoFrame, seed: int = 0) -> None:
    root = Path(directory)
    stem = f"pseudo_{pseudo.frame_id:04d}_x{pseudo.factor}"
    save_png(root / f"{stem}.png", pseudo.image)
    np.save(root / f"{stem}.npy", pseudo.image)
    if pseudo.meta is not None:
        np.save(root / f"{stem}_mask.npy", pseudo.meta.error_mask)
        record = PseudoRecord(
            frame_id=pseudo.frame_id,
            bracket=pseudo.bracket,
            factor=pseudo.factor,
            hidden_s=pseudo.meta.hidden_s,
            oracle=pseudo.meta.config,
            seed=seed,
        )
        (root / f"{stem}.json").write_text(record.model_dump_json(indent=2))


def load_pseudo(
    directory: PathLike,
    frame_id: int,
    factor: int,
    oracle: Optional[OracleConfig] = None,
    seed: Optional[int] = None,
) -> Optional[PseudoFrame]:
    """Cached pseudo-frame, or None when missing or written by another oracle config or seed"""
    root = Path(directory)
    stem = f"pseudo_{frame_id:04d}_x{factor}"
    image_path, meta_path = root / f"{stem}.npy", root / f"{stem}.json"
    if not image_path.exists() or not meta_path.exists():
        return None
    record = PseudoRecord.model_validate_json(meta_path.read_text())
    if (oracle is not None and record.oracle != oracle) or (seed is not None and record.seed != seed):
        logger.info(f"Cached pseudo-frame {stem} was made by another oracle; regenerating")
        return None
    mask = np.load(root / f"{stem}_mask.npy")
    return PseudoFrame(
        image=np.load(image_path),
        bracket=tuple(record.bracket),
        frame_id=record.frame_id,
        factor=record.factor,
        meta=OracleMeta(hidden_s=record.hidden_s, config=record.oracle, error_mask=mask),
    )


# Uncertainty maps

def save_uncertainty_map(directory: PathLike, umap: UncertaintyMap) -> Tuple[Path, Path]:
    """8-bit preview normalized per frame plus the raw exposed values"""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    beta = umap.exposed()
    peak = float(beta.max())
    preview = beta / peak if peak > 0 else np.zeros_like(beta)
    png = root / f"uncertainty_{umap.frame_id:04d}.png"
    raw = root / f"uncertainty_{umap.frame_id:04d}.npy"
    Image.fromarray(to_uint8(preview)).save(png)
    np.save(raw, beta)
    return png, raw


def save_depth_preview(path: PathLike, depth: np.ndarray, alpha: np.ndarray) -> Path:
    """Near is bright; pixels with no coverage are black"""
    covered = alpha > 0
    preview = np.zeros_like(depth)
    if covered.any():
        near, far = float(depth[covered].min()), float(depth[covered].max())
        span = far - near if far > near else 1.0
        preview[covered] = 1.0 - 0.8 * (depth[covered] - near) / span
    save_png(path, preview)
    return Path(path)


# Tables

def write_csv(path: PathLike, frame: pd.DataFrame, append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = not (append and path.exists())
    frame.to_csv(path, mode="a" if append else "w", header=header, index=False, float_format=CSV_FLOAT_FORMAT)


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# Configs

def _validation_to_config_error(e: ValidationError, path: str) -> ConfigError:
    first = e.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or None
    return ConfigError(first["msg"], path=path, location=location)


def load_experiment_config(path: PathLike) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", path=str(path))
    text = path.read_text()
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, path=str(path), location=f"{e.lineno}:{e.colno}") from e
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise _validation_to_config_error(e, str(path)) from e


def save_experiment_config(path: PathLike, config: ExperimentConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(config.model_dump_json(indent=2))
