"""
Numeric domain types shared by the services.

Everything here is a thin container over numpy arrays. A PVGaussian holds
either one primitive (fields shaped (3,), (4,) or scalars) or a whole set in
struct-of-arrays layout (leading dimension N); the pvg and rasterizer
services broadcast over both.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import SpecInvalid

GAUSSIAN_FIELDS: Tuple[str, ...] = (
    "mu",
    "rot",
    "log_scale",
    "opacity_logit",
    "color",
    "velocity",
    "tau",
    "log_beta",
)

# trailing shape of one primitive's field
FIELD_SHAPES: Dict[str, Tuple[int, ...]] = {
    "mu": (3,),
    "rot": (4,),
    "log_scale": (3,),
    "opacity_logit": (),
    "color": (3,),
    "velocity": (3,),
    "tau": (),
    "log_beta": (),
}


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rotation quaternion (w, x, y, z) and camera centre"""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_array(self.rotation).reshape(4))
        object.__setattr__(self, "translation", _as_array(self.translation).reshape(3))

    def rotation_matrix(self) -> np.ndarray:
        from app.services.geometry import quat_to_rotation

        return quat_to_rotation(self.rotation)

    def view_rotation(self) -> np.ndarray:
        """W: world-to-camera rotation"""
        return self.rotation_matrix().T

    def view_matrix(self) -> np.ndarray:
        W = self.view_rotation()
        view = np.eye(4)
        view[:3, :3] = W
        view[:3, 3] = -W @ self.translation
        return view


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; pixel centres sit on integer coordinates, x = column, y = row"""

    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SpecInvalid(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise SpecInvalid(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SpecInvalid(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    def with_pose(self, pose: Pose) -> "Camera":
        return replace(self, pose=pose)

    def scaled(self, factor: int) -> "Camera":
        """Intrinsics at 1/factor resolution; pixel (j) covers original pixels fj .. fj+f-1"""
        if factor == 1:
            return self
        return Camera(
            pose=self.pose,
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
            width=self.width // factor,
            height=self.height // factor,
        )


@dataclass
class PVGaussian:
    """Periodic-vibration Gaussian (one primitive or a struct-of-arrays set)"""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    velocity: np.ndarray
    tau: np.ndarray
    log_beta: np.ndarray

    def __post_init__(self):
        for name in GAUSSIAN_FIELDS:
            setattr(self, name, _as_array(getattr(self, name)))

    @property
    def count(self) -> int:
        if self.tau.ndim == 0:
            return 1
        return int(self.tau.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def is_batched(self) -> bool:
        return self.tau.ndim == 1

    def params(self) -> Dict[str, np.ndarray]:
        """Live references to the parameter arrays (optimizer mutates them in place)"""
        return {name: getattr(self, name) for name in GAUSSIAN_FIELDS}

    def select(self, index) -> "PVGaussian":
        return PVGaussian(**{name: getattr(self, name)[index] for name in GAUSSIAN_FIELDS})

    def __getitem__(self, i: int) -> "PVGaussian":
        return self.select(i)

    def copy(self) -> "PVGaussian":
        return PVGaussian(**{name: getattr(self, name).copy() for name in GAUSSIAN_FIELDS})

    def zeros_like(self) -> "PVGaussian":
        return PVGaussian(**{name: np.zeros_like(getattr(self, name)) for name in GAUSSIAN_FIELDS})

    @classmethod
    def empty(cls) -> "PVGaussian":
        return cls(**{name: np.zeros((0,) + FIELD_SHAPES[name]) for name in GAUSSIAN_FIELDS})

    @classmethod
    def concat(cls, parts: Sequence["PVGaussian"]) -> "PVGaussian":
        parts = [p for p in parts if p.count > 0]
        if not parts:
            return cls.empty()
        return cls(
            **{
                name: np.concatenate(
                    [np.reshape(getattr(p, name), (-1,) + FIELD_SHAPES[name]) for p in parts]
                )
                for name in GAUSSIAN_FIELDS
            }
        )


@dataclass
class SceneModel:
    gaussians: PVGaussian
    cycle_length: float = 0.3
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # ground-truth object ids (-1 background); only synthetic GT scenes carry them
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.cycle_length <= 0:
            raise SpecInvalid(f"cycle length must be positive, got {self.cycle_length}")
        self.background = _as_array(self.background).reshape(3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def count(self) -> int:
        return self.gaussians.count

    def select(self, index) -> "SceneModel":
        return SceneModel(
            gaussians=self.gaussians.select(index),
            cycle_length=self.cycle_length,
            background=self.background.copy(),
            labels=None if self.labels is None else self.labels[index],
        )

    def copy(self) -> "SceneModel":
        return SceneModel(
            gaussians=self.gaussians.copy(),
            cycle_length=self.cycle_length,
            background=self.background.copy(),
            labels=None if self.labels is None else self.labels.copy(),
        )

    def object_ids(self) -> List[int]:
        if self.labels is None:
            return []
        return sorted(int(k) for k in np.unique(self.labels) if k >= 0)


@dataclass
class RenderOutput:
    image: np.ndarray
    depth_map: np.ndarray
    alpha_map: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class GradientBuffer:
    """Adjoint of one render: per-Gaussian gradients, camera pose and render time"""

    gaussians: PVGaussian
    pose_rotation: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pose_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    @classmethod
    def zeros(cls, scene: SceneModel) -> "GradientBuffer":
        return cls(gaussians=scene.gaussians.zeros_like())

    def add_(self, other: "GradientBuffer") -> "GradientBuffer":
        for name in GAUSSIAN_FIELDS:
            getattr(self.gaussians, name)[...] += getattr(other.gaussians, name)
        self.pose_rotation = self.pose_rotation + other.pose_rotation
        self.pose_translation = self.pose_translation + other.pose_translation
        self.time = self.time + other.time
        return self

    def nonfinite_groups(self) -> List[str]:
        groups = [
            name for name in GAUSSIAN_FIELDS if not np.all(np.isfinite(getattr(self.gaussians, name)))
        ]
        if not np.all(np.isfinite(self.pose_rotation)):
            groups.append("pose_rotation")
        if not np.all(np.isfinite(self.pose_translation)):
            groups.append("pose_translation")
        if not np.isfinite(self.time):
            groups.append("time")
        return groups


@dataclass
class TimestampParam:
    """Learnable bias: t_mid = base_index + sigmoid(delta_t)"""

    base_index: int
    delta_t: float = 0.0

    @property
    def s(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.delta_t)))


@dataclass(frozen=True)
class PosePair:
    """Bracketing poses of frames t and t+1 with their normalized timestamps"""

    p_start: Pose
    p_end: Pose
    t_start: float = 0.0
    t_end: float = 1.0


@dataclass
class UncertaintyMap:
    """Per-pixel weights; stored unconstrained and exposed through softplus"""

    values: np.ndarray
    frame_id: int

    @classmethod
    def constant(cls, frame_id: int, shape: Tuple[int, int], beta: float) -> "UncertaintyMap":
        # inverse softplus
        raw = beta + np.log(-np.expm1(-beta)) if beta > 0 else -30.0
        return cls(values=np.full(shape, raw, dtype=np.float64), frame_id=frame_id)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def exposed(self) -> np.ndarray:
        return np.minimum(np.logaddexp(0.0, self.values), settings.BETA_CLAMP)

    def exposed_grad(self) -> np.ndarray:
        """d exposed / d values (zero where the safety clamp is active)"""
        slope = 1.0 / (1.0 + np.exp(-self.values))
        return np.where(np.logaddexp(0.0, self.values) < settings.BETA_CLAMP, slope, 0.0)

    def upsample(self, factor: int) -> "UncertaintyMap":
        values = np.repeat(np.repeat(self.values, factor, axis=0), factor, axis=1)
        return UncertaintyMap(values=values, frame_id=self.frame_id)


@dataclass
class OracleMeta:
    hidden_s: float
    config: "object"
    error_mask: np.ndarray


@dataclass
class PseudoFrame:
    image: np.ndarray
    bracket: Tuple[int, int]
    frame_id: int
    factor: int = 1
    meta: Optional[OracleMeta] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class Frame:
    index: int
    image: np.ndarray
    camera: Camera
    timestamp: float


@dataclass
class Capture:
    name: str
    frames: List[Frame]
    holdout: List[Frame]
    # LiDAR-style sweep used to initialise training: x y z r g b t per row
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))
    # holdout i sits between training frames holdout_brackets[i] and +1
    holdout_brackets: List[int] = field(default_factory=list)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    def pose_pair(self, k: int) -> PosePair:
        a, b = self.frames[k], self.frames[k + 1]
        return PosePair(
            p_start=a.camera.pose, p_end=b.camera.pose, t_start=a.timestamp, t_end=b.timestamp
        )

