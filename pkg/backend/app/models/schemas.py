from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Optional, Tuple
from enum import Enum

VALID_FACTORS = (1, 2, 4, 8, 16)

Vec3 = Tuple[float, float, float]

# Enums
class TrajectoryKind(str, Enum):
    linear = "linear"
    arc = "arc"

class OraclePreset(str, Enum):
    clean = "clean"
    biased = "biased"
    streetlike = "streetlike"
    unadapted = "unadapted"

class AblationArm(str, Enum):
    baseline = "baseline"
    pseudo = "+pseudo"
    jto = "+JTO"
    jto_ud = "+JTO+UD"

# Base schemas
class BaseSchema(BaseModel):
    class Config:
        from_attributes = True
        extra = "forbid"

# Oracle schemas
class WarpPatch(BaseSchema):
    """Local displacement of a rectangular region given in image fractions"""
    x0: float = Field(..., ge=0, le=1)
    y0: float = Field(..., ge=0, le=1)
    x1: float = Field(..., ge=0, le=1)
    y1: float = Field(..., ge=0, le=1)
    dx: float = 0.0  # full-resolution pixels
    dy: float = 0.0

    @model_validator(mode="after")
    def check_extent(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError("warp patch must have positive extent")
        return self

class OracleConfig(BaseSchema):
    preset: Optional[OraclePreset] = None
    hidden_s: float = Field(0.5, gt=0, lt=1)
    pose_jitter_rot: float = Field(0.0, ge=0)    # radians
    pose_jitter_trans: float = Field(0.0, ge=0)  # world units
    color_noise_sigma: float = Field(0.0, ge=0)
    warp_patches: List[WarpPatch] = []
    mover_warp_px: float = Field(0.0, ge=0)
    mover_blur_sigma: float = Field(0.0, ge=0)

    @classmethod
    def from_preset(cls, preset: OraclePreset) -> "OracleConfig":
        preset = OraclePreset(preset)
        if preset == OraclePreset.clean:
            return cls(preset=preset)
        if preset == OraclePreset.biased:
            return cls(preset=preset, hidden_s=0.3)
        if preset == OraclePreset.streetlike:
            return cls(preset=preset, hidden_s=0.45, color_noise_sigma=0.01, mover_warp_px=3.0)
        return cls(
            preset=preset,
            hidden_s=0.45,
            pose_jitter_rot=0.01,
            pose_jitter_trans=0.02,
            color_noise_sigma=0.05,
            mover_warp_px=6.0,
            mover_blur_sigma=2.0,
            warp_patches=[WarpPatch(x0=0.05, y0=0.6, x1=0.3, y1=0.95, dx=4.0, dy=-2.0)],
        )

    @property
    def is_clean(self) -> bool:
        return (
            self.pose_jitter_rot == 0
            and self.pose_jitter_trans == 0
            and self.color_noise_sigma == 0
            and not self.warp_patches
            and self.mover_warp_px == 0
            and self.mover_blur_sigma == 0
        )

# Scene schemas
class MoverSpec(BaseSchema):
    trajectory: TrajectoryKind = TrajectoryKind.linear
    start: Vec3 = (0.0, 0.0, 4.0)
    direction: Vec3 = (1.0, 0.0, 0.0)
    speed: float = Field(1.0, ge=0)          # world units per unit time
    radius: float = Field(1.0, gt=0)         # arc trajectories only
    size: float = Field(0.15, gt=0)
    color: Vec3 = (0.9, 0.2, 0.1)
    gaussian_count: int = Field(4, ge=1)     # per time slice
    slices: int = Field(0, ge=0)             # 0 picks one slice per capture frame

    @field_validator("color")
    @classmethod
    def check_color(cls, v):
        if any(c < 0 or c > 1 for c in v):
            raise ValueError("color components must lie in [0, 1]")
        return v

    @field_validator("direction")
    @classmethod
    def check_direction(cls, v):
        if sum(c * c for c in v) == 0:
            raise ValueError("direction must be nonzero")
        return v

class BackgroundSpec(BaseSchema):
    extent: Tuple[float, float] = (8.0, 5.0)
    depth: float = Field(8.0, gt=0)
    grid: Tuple[int, int] = (16, 10)
    color_frequency: float = Field(1.3, ge=0)

    @field_validator("grid")
    @classmethod
    def check_grid(cls, v):
        if v[0] < 0 or v[1] < 0:
            raise ValueError("grid counts must be non-negative")
        return v

class CameraPathSpec(BaseSchema):
    start: Vec3 = (0.0, 0.0, 0.0)
    end: Vec3 = (0.3, 0.0, 0.0)
    yaw_deg: float = 0.0   # total yaw sweep over the capture
    width: int = Field(96, gt=0)
    height: int = Field(64, gt=0)
    fx: float = Field(80.0, gt=0)
    fy: float = Field(80.0, gt=0)
    cx: Optional[float] = None
    cy: Optional[float] = None

    @property
    def principal_point(self) -> Tuple[float, float]:
        cx = (self.width - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.height - 1) / 2.0 if self.cy is None else self.cy
        return cx, cy

class SynthSceneSpec(BaseSchema):
    name: str = Field("scene", min_length=1, max_length=100)
    background: BackgroundSpec = BackgroundSpec()
    movers: List[MoverSpec] = []
    background_color: Vec3 = (0.0, 0.0, 0.0)
    cycle_length: float = Field(0.3, gt=0)
    duration: float = Field(1.0, gt=0)

class CaptureSpec(BaseSchema):
    camera_path: CameraPathSpec = CameraPathSpec()
    n_frames: int = Field(16, ge=4)
    holdout_fraction: float = Field(1.0, ge=0, le=1)
    points_per_frame: int = Field(200, ge=1)

# Training schemas
class LearningRates(BaseSchema):
    mu: float = Field(1.6e-4, ge=0)
    mu_final: float = Field(1.6e-6, ge=0)
    rot: float = Field(1e-3, ge=0)
    log_scale: float = Field(5e-3, ge=0)
    opacity_logit: float = Field(5e-2, ge=0)
    color: float = Field(2.5e-3, ge=0)
    velocity: float = Field(1e-3, ge=0)
    tau: float = Field(1e-3, ge=0)
    log_beta: float = Field(2e-2, ge=0)
    delta_t: float = Field(1e-2, ge=0)
    umap: float = Field(1e-2, ge=0)

class ResolutionStage(BaseSchema):
    until_iter: int = Field(..., ge=1)   # stage covers iterations < until_iter
    factor: int

    @field_validator("factor")
    @classmethod
    def check_factor(cls, v):
        if v not in VALID_FACTORS:
            raise ValueError(f"factor must be one of {VALID_FACTORS}")
        return v

class DistillWeights(BaseSchema):
    omega_f: float = Field(1.0, ge=0)
    lambda_f: float = Field(1.0, ge=0)
    omega_tv: float = Field(0.001, ge=0)

def default_schedule(total_iters: int, factors=(16, 8, 4, 2)) -> List[ResolutionStage]:
    """Equal splits of total_iters across the factors; stages too short to hold an iteration are skipped"""
    stages: List[ResolutionStage] = []
    n = len(factors)
    for k, factor in enumerate(factors):
        until = total_iters if k == n - 1 else (total_iters * (k + 1)) // n
        if until < 1 or (stages and until <= stages[-1].until_iter):
            continue
        stages.append(ResolutionStage(until_iter=until, factor=factor))
    return stages

class TrainConfig(BaseSchema):
    total_iters: int = Field(2000, ge=1)
    lr: LearningRates = LearningRates()
    distill_period: int = Field(4, ge=1)
    resolution_schedule: List[ResolutionStage] = []
    l1_w: float = Field(0.8, ge=0)
    ssim_w: float = Field(0.2, ge=0)
    weights: DistillWeights = DistillWeights()

    # arm switches
    distill: bool = True
    optimize_delta_t: bool = True
    learn_umap: bool = True
    frozen_beta: float = Field(0.5, ge=0)   # exposed beta_e when the map is frozen
    delta_t_init: float = 0.0

    # initialization and pruning
    initial_lifespan: float = Field(0.1, gt=0)
    static_lifespan: float = Field(10.0, gt=0)   # points re-observed at another sweep time
    revisit_radius: float = Field(0.05, ge=0)    # 0 seeds every point with initial_lifespan
    initial_scale: float = Field(0.05, gt=0)
    initial_opacity: float = Field(0.5, gt=0, lt=1)
    prune_every: int = Field(100, ge=1)
    prune_threshold: float = Field(0.005, ge=0, lt=1)

    # logging
    holdout_every: int = Field(250, ge=1)
    checkpoint_every: int = Field(0, ge=0)  # 0 disables periodic checkpoints

    @model_validator(mode="after")
    def fill_schedule(self):
        if not self.resolution_schedule:
            self.resolution_schedule = default_schedule(self.total_iters)
        factors = [stage.factor for stage in self.resolution_schedule]
        if any(b > a for a, b in zip(factors, factors[1:])):
            raise ValueError("resolution schedule factors must be non-increasing")
        limits = [stage.until_iter for stage in self.resolution_schedule]
        if any(b <= a for a, b in zip(limits, limits[1:])):
            raise ValueError("resolution schedule thresholds must be increasing")
        return self

    def stage_index(self, iteration: int) -> int:
        for k, stage in enumerate(self.resolution_schedule):
            if iteration < stage.until_iter:
                return k
        return len(self.resolution_schedule) - 1

    def factor_at(self, iteration: int) -> int:
        return self.resolution_schedule[self.stage_index(iteration)].factor

    def for_arm(self, arm: AblationArm) -> "TrainConfig":
        arm = AblationArm(arm)
        switches = {
            AblationArm.baseline: dict(distill=False, optimize_delta_t=False, learn_umap=False),
            AblationArm.pseudo: dict(distill=True, optimize_delta_t=False, learn_umap=False, delta_t_init=0.0),
            AblationArm.jto: dict(distill=True, optimize_delta_t=True, learn_umap=False),
            AblationArm.jto_ud: dict(distill=True, optimize_delta_t=True, learn_umap=True),
        }[arm]
        return self.model_copy(update=switches)

class ExperimentConfig(BaseSchema):
    name: str = Field("experiment", min_length=1, max_length=100)
    seed: int = Field(0, ge=0)
    output_dir: str = "runs"
    benchmark: Optional[str] = None          # registry name, e.g. "fastmover-6"
    scene: Optional[SynthSceneSpec] = None
    capture_path: Optional[str] = None
    capture: CaptureSpec = CaptureSpec()
    train: TrainConfig = TrainConfig()
    oracle: OracleConfig = Field(default_factory=lambda: OracleConfig.from_preset(OraclePreset.streetlike))
    arms: List[AblationArm] = Field(default_factory=lambda: list(AblationArm))

# Report schemas
class AblationRow(BaseSchema):
    arm: AblationArm
    scene: str
    psnr: float
    ssim: float
    gms_ssim_proxy: float

class FlowErrorRow(BaseSchema):
    scene: str
    object_id: int
    flow_px: float
    error: float

class EvalRow(BaseSchema):
    frame: int
    timestamp: float
    psnr: float
    ssim: float
    gms_ssim_proxy: float

# On-disk records
class FrameRecord(BaseSchema):
    index: int
    file: str
    timestamp: float
    rotation: Tuple[float, float, float, float]
    translation: Vec3

class CaptureRecord(BaseSchema):
    format: str = "pvg4d-capture"
    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    frames: List[FrameRecord]
    holdout: List[FrameRecord] = []
    holdout_brackets: List[int] = []
    object_ids: List[int] = []

class PseudoRecord(BaseSchema):
    frame_id: int
    bracket: Tuple[int, int]
    factor: int
    hidden_s: float
    oracle: OracleConfig
    seed: int = 0

class CheckpointMeta(BaseSchema):
    version: int
    iteration: int
    cycle_length: float
    background: Vec3
    delta_t: List[float]
    umap_frame_ids: List[int]
    umap_factor: int
    adam_steps: Dict[str, int]
    config: TrainConfig
