"""
Ground-truth synthetic dynamic scenes and captures.

A mover is realized as a chain of time slices. Slice k is a small cluster
of PVGaussians with tau_k on an even grid over the sequence, centred on the
trajectory at tau_k and moving along its tangent, with a lifespan of about
one slice spacing. Background primitives are static (huge lifespan, zero
velocity).
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from app.core.errors import SpecInvalid
from app.models.domain import Camera, Capture, Frame, PVGaussian, Pose, PosePair, SceneModel
from app.models.schemas import (
    BackgroundSpec,
    CameraPathSpec,
    CaptureSpec,
    MoverSpec,
    SynthSceneSpec,
    TrajectoryKind,
)
from app.services.geometry import project_points, quat_from_axis_angle
from app.services.pose_interp import interp_pose_at
from app.services.pvg import opacity_at, position_at
from app.services.rasterizer import render, render_labels

logger = logging.getLogger(__name__)

STATIC_LOG_BETA = 20.0
SLICES_PER_FRAME = 4
MIN_FRUSTUM_FRACTION = 0.8


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def trajectory(mover: MoverSpec, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(position, velocity) of a mover's reference point at times t"""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    start = np.asarray(mover.start, dtype=np.float64)
    d = _unit(mover.direction)
    if mover.trajectory == TrajectoryKind.linear:
        pos = start + mover.speed * t[:, None] * d
        vel = np.broadcast_to(mover.speed * d, pos.shape).copy()
        return pos, vel
    # arc in the plane of constant depth
    d = _unit([d[0], d[1], 0.0])
    n = np.array([-d[1], d[0], 0.0])
    omega = mover.speed / mover.radius
    phi = omega * t
    pos = start + mover.radius * (np.sin(phi)[:, None] * d + (1.0 - np.cos(phi))[:, None] * n)
    vel = mover.speed * (np.cos(phi)[:, None] * d + np.sin(phi)[:, None] * n)
    return pos, vel


def camera_path(spec: CameraPathSpec, times: Sequence[float]) -> List[Camera]:
    cx, cy = spec.principal_point
    start = np.asarray(spec.start, dtype=np.float64)
    end = np.asarray(spec.end, dtype=np.float64)
    cams = []
    for t in times:
        pose = Pose(
            rotation=quat_from_axis_angle((0.0, 1.0, 0.0), np.deg2rad(spec.yaw_deg) * t),
            translation=(1.0 - t) * start + t * end,
        )
        cams.append(Camera(pose=pose, fx=spec.fx, fy=spec.fy, cx=cx, cy=cy, width=spec.width, height=spec.height))
    return cams


class SceneSynthService:
    """Builds ground-truth scenes, renders captures and measures analytic flow"""

    @staticmethod
    def background_gaussians(spec: BackgroundSpec) -> PVGaussian:
        nx, ny = spec.grid
        if nx == 0 or ny == 0:
            return PVGaussian.empty()
        ex, ey = spec.extent
        xs = (np.arange(nx) + 0.5) / nx * ex - ex / 2.0
        ys = (np.arange(ny) + 0.5) / ny * ey - ey / 2.0
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        n = gx.size
        mu = np.stack([gx.ravel(), gy.ravel(), np.full(n, spec.depth)], axis=-1)

        f = spec.color_frequency
        color = np.stack(
            [
                0.5 + 0.35 * np.sin(f * mu[:, 0]),
                0.5 + 0.35 * np.cos(f * mu[:, 1]),
                0.5 + 0.3 * np.sin(0.7 * f * (mu[:, 0] + mu[:, 1])),
            ],
            axis=-1,
        )
        cell = 0.6 * max(ex / nx, ey / ny)
        return PVGaussian(
            mu=mu,
            rot=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
            log_scale=np.tile(np.log([cell, cell, 0.05 * cell]), (n, 1)),
            opacity_logit=np.full(n, _logit(0.95)),
            color=color,
            velocity=np.zeros((n, 3)),
            tau=np.full(n, 0.5),
            log_beta=np.full(n, STATIC_LOG_BETA),
        )

    @staticmethod
    def mover_gaussians(mover: MoverSpec, index: int, n_slices: int, duration: float, seed: int = 0) -> PVGaussian:
        rng = np.random.default_rng([seed, index])
        k = mover.gaussian_count
        offsets = rng.normal(scale=0.35 * mover.size, size=(k, 3))
        offsets[0] = 0.0
        shades = np.clip(np.asarray(mover.color) + rng.normal(scale=0.04, size=(k, 3)), 0.0, 1.0)

        taus = np.linspace(0.0, duration, n_slices)
        spacing = duration / max(n_slices - 1, 1)
        centres, tangents = trajectory(mover, taus)

        mu = (centres[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
        n = mu.shape[0]
        return PVGaussian(
            mu=mu,
            rot=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
            log_scale=np.full((n, 3), np.log(0.5 * mover.size)),
            opacity_logit=np.full(n, _logit(0.9)),
            color=np.tile(shades, (n_slices, 1)),
            velocity=np.repeat(tangents, k, axis=0),
            tau=np.repeat(taus, k),
            log_beta=np.full(n, np.log(0.6 * spacing)),
        )

    @staticmethod
    def make_scene(spec: SynthSceneSpec, n_frames: int = 16, seed: int = 0) -> SceneModel:
        if n_frames < 2:
            raise SpecInvalid(f"need at least 2 frames to place mover slices, got {n_frames}")
        parts = [SceneSynthService.background_gaussians(spec.background)]
        labels = [np.full(parts[0].count, -1, dtype=np.int64)]
        for i, mover in enumerate(spec.movers):
            n_slices = mover.slices or SLICES_PER_FRAME * (n_frames - 1) + 1
            if n_slices < 2:
                raise SpecInvalid(f"mover {i} needs at least 2 slices, got {n_slices}")
            g = SceneSynthService.mover_gaussians(mover, i, n_slices, spec.duration, seed)
            parts.append(g)
            labels.append(np.full(g.count, i, dtype=np.int64))
        gaussians = PVGaussian.concat(parts)
        if gaussians.count == 0:
            raise SpecInvalid(f"scene '{spec.name}' has no primitives")
        return SceneModel(
            gaussians=gaussians,
            cycle_length=spec.cycle_length,
            background=np.asarray(spec.background_color),
            labels=np.concatenate(labels),
        )

    @staticmethod
    def object_centre(scene: SceneModel, label: int, t: float) -> Optional[np.ndarray]:
        """Opacity-weighted centre of one object at time t"""
        sub = scene.select(np.nonzero(scene.labels == label)[0]).gaussians
        if sub.count == 0:
            return None
        w = np.atleast_1d(opacity_at(sub, t))
        if w.sum() <= 0:
            return None
        pos = position_at(sub, t, scene.cycle_length).reshape(-1, 3)
        return (w[:, None] * pos).sum(axis=0) / w.sum()

    @staticmethod
    def make_capture(
        scene: SceneModel, spec: CaptureSpec, name: str = "capture", seed: int = 0
    ) -> Capture:
        n = spec.n_frames
        if n < 4:
            raise SpecInvalid(f"capture needs at least 4 frames, got {n}")
        times = [k / (n - 1) for k in range(n)]
        cams = camera_path(spec.camera_path, times)

        frames = [
            Frame(index=k, image=render(scene, cams[k], times[k]).image, camera=cams[k], timestamp=times[k])
            for k in range(n)
        ]

        n_gaps = n - 1
        n_hold = int(round(spec.holdout_fraction * n_gaps))
        gaps = sorted(set(int(round(g)) for g in np.linspace(0, n_gaps - 1, n_hold))) if n_hold else []
        holdout = []
        for j, k in enumerate(gaps):
            pair = PosePair(cams[k].pose, cams[k + 1].pose, times[k], times[k + 1])
            pose, t_mid = interp_pose_at(pair, 0.5)
            cam = cams[k].with_pose(pose)
            holdout.append(Frame(index=j, image=render(scene, cam, t_mid).image, camera=cam, timestamp=t_mid))

        capture = Capture(
            name=name,
            frames=frames,
            holdout=holdout,
            points=SceneSynthService.lidar_sweep(scene, frames, spec.points_per_frame, seed),
            holdout_brackets=gaps,
        )
        SceneSynthService.check_frustum(scene, capture)
        logger.info(f"Capture '{name}': {len(frames)} frames, {len(holdout)} holdout, {len(capture.points)} points")
        return capture

    @staticmethod
    def lidar_sweep(scene: SceneModel, frames: List[Frame], per_frame: int, seed: int = 0) -> np.ndarray:
        """Surface samples (x y z r g b t) of primitives visible in each frame"""
        g = scene.gaussians
        rows = []
        for frame in frames:
            t = frame.timestamp
            pos = position_at(g, t, scene.cycle_length).reshape(-1, 3)
            weight = np.atleast_1d(opacity_at(g, t))
            uv, z = project_points(frame.camera, pos)
            inside = (
                (z > 0.1)
                & (uv[:, 0] >= 0) & (uv[:, 0] <= frame.camera.width - 1)
                & (uv[:, 1] >= 0) & (uv[:, 1] <= frame.camera.height - 1)
                & (weight > 0.3)
            )
            idx = np.nonzero(inside)[0]
            if idx.size == 0:
                continue
            rng = np.random.default_rng([seed, frame.index])
            pick = rng.choice(idx, size=min(per_frame, idx.size), replace=False)
            pick.sort()
            jitter = rng.normal(scale=0.01, size=(pick.size, 3))
            rows.append(
                np.concatenate(
                    [pos[pick] + jitter, np.reshape(g.color, (-1, 3))[pick], np.full((pick.size, 1), t)], axis=1
                )
            )
        return np.concatenate(rows, axis=0) if rows else np.zeros((0, 7))

    @staticmethod
    def check_frustum(scene: SceneModel, capture: Capture) -> Dict[int, float]:
        fractions = {}
        for label in scene.object_ids():
            inside = 0
            for frame in capture.frames:
                centre = SceneSynthService.object_centre(scene, label, frame.timestamp)
                if centre is None:
                    continue
                uv, z = project_points(frame.camera, centre[None, :])
                cam = frame.camera
                if z[0] > 0 and 0 <= uv[0, 0] <= cam.width - 1 and 0 <= uv[0, 1] <= cam.height - 1:
                    inside += 1
            fractions[label] = inside / len(capture.frames)
            if fractions[label] < MIN_FRUSTUM_FRACTION:
                logger.warning(
                    f"Mover {label} of '{capture.name}' inside the frustum in only {fractions[label]:.0%} of frames"
                )
        return fractions

    @staticmethod
    def gt_flow_magnitude(scene: SceneModel, capture: Capture, frame_pair: Tuple[int, int]) -> Dict[int, float]:
        """
        Analytic flow in pixels between two training frames. Movers use the
        projected displacement of their opacity-weighted centre; the
        background (-1) averages the displacement of its primitives, which
        only the camera motion produces.
        """
        a, b = (capture.frames[k] for k in frame_pair)
        flows: Dict[int, float] = {}

        bg = np.nonzero(scene.labels == -1)[0] if scene.labels is not None else np.arange(scene.count)
        if bg.size:
            sub = scene.select(bg)
            uv_a, _ = project_points(a.camera, position_at(sub.gaussians, a.timestamp, scene.cycle_length))
            uv_b, _ = project_points(b.camera, position_at(sub.gaussians, b.timestamp, scene.cycle_length))
            flows[-1] = float(np.mean(np.linalg.norm(uv_b - uv_a, axis=-1)))

        for label in scene.object_ids():
            ca = SceneSynthService.object_centre(scene, label, a.timestamp)
            cb = SceneSynthService.object_centre(scene, label, b.timestamp)
            if ca is None or cb is None:
                continue
            uv_a, _ = project_points(a.camera, ca[None, :])
            uv_b, _ = project_points(b.camera, cb[None, :])
            flows[label] = float(np.linalg.norm(uv_b[0] - uv_a[0]))
        return flows

    @staticmethod
    def object_masks(scene: SceneModel, cam: Camera, t: float) -> Dict[int, np.ndarray]:
        return {label: render_labels(scene, cam, t, label) for label in scene.object_ids()}


# Benchmark registry

def _visible_half_extent(path: CameraPathSpec, depth: float) -> Tuple[float, float]:
    return 0.5 * path.width / path.fx * depth, 0.5 * path.height / path.fy * depth


def mover_for_flow(flow_px: float, depth: float, path: CameraPathSpec, n_frames: int, color, lateral: float = 1.0) -> MoverSpec:
    """Mover whose projected flow per frame interval is about flow_px at the given depth"""
    dt = 1.0 / (n_frames - 1)
    speed = flow_px * depth / (path.fx * dt)
    half_w, half_h = _visible_half_extent(path, depth)
    if speed <= 1.6 * half_w:
        return MoverSpec(
            trajectory=TrajectoryKind.linear,
            start=(-0.5 * speed * lateral, 0.25 * half_h, depth),
            direction=(lateral, 0.0, 0.0),
            speed=speed,
            size=0.06 * depth,
            color=color,
            gaussian_count=5,
        )
    radius = 0.55 * half_h
    # per-frame chord must still be about flow_px, so cap the angular step
    angle = 2.0 * np.arcsin(min(1.0, flow_px * depth / (2.0 * path.fx * radius)))
    return MoverSpec(
        trajectory=TrajectoryKind.arc,
        start=(-0.5 * radius, -0.3 * half_h, depth),
        direction=(1.0, 0.0, 0.0),
        speed=radius * angle / dt,
        radius=radius,
        size=0.06 * depth,
        color=color,
        gaussian_count=5,
    )


def fastmover_benchmark(n_scenes: int = 6) -> List[Tuple[SynthSceneSpec, CaptureSpec]]:
    path = CameraPathSpec(start=(0.0, 0.0, 0.0), end=(0.25, 0.0, 0.0), width=96, height=64, fx=80.0, fy=80.0)
    capture = CaptureSpec(camera_path=path, n_frames=16)
    flows = np.geomspace(2.0, 40.0, 2 * n_scenes)
    palette = [(0.95, 0.25, 0.15), (0.15, 0.35, 0.95), (0.95, 0.85, 0.1), (0.2, 0.85, 0.3)]
    specs = []
    for i in range(n_scenes):
        slow, fast = flows[i], flows[2 * n_scenes - 1 - i]
        movers = [
            mover_for_flow(slow, 4.0, path, capture.n_frames, palette[i % 4]),
            mover_for_flow(fast, 5.0, path, capture.n_frames, palette[(i + 1) % 4], lateral=-1.0),
        ]
        scene = SynthSceneSpec(
            name=f"fastmover-{i}",
            background=BackgroundSpec(extent=(11.0, 7.5), depth=8.0, grid=(22, 15)),
            movers=movers,
        )
        specs.append((scene, capture))
    return specs


def smoke_benchmark() -> List[Tuple[SynthSceneSpec, CaptureSpec]]:
    path = CameraPathSpec(start=(0.0, 0.0, 0.0), end=(0.1, 0.0, 0.0), width=32, height=32, fx=28.0, fy=28.0)
    capture = CaptureSpec(camera_path=path, n_frames=4, points_per_frame=60)
    scene = SynthSceneSpec(
        name="smoke",
        background=BackgroundSpec(extent=(8.0, 8.0), depth=6.0, grid=(8, 8)),
        movers=[mover_for_flow(3.0, 3.0, path, capture.n_frames, (0.9, 0.2, 0.1))],
    )
    return [(scene, capture)]


BENCHMARKS: Dict[str, Callable[[], List[Tuple[SynthSceneSpec, CaptureSpec]]]] = {
    "fastmover-6": fastmover_benchmark,
    "smoke": smoke_benchmark,
}


def get_benchmark(name: str) -> List[Tuple[SynthSceneSpec, CaptureSpec]]:
    if name not in BENCHMARKS:
        raise SpecInvalid(f"unknown benchmark '{name}'; available: {', '.join(sorted(BENCHMARKS))}")
    return BENCHMARKS[name]()
