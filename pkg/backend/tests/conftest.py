"""Shared fixtures: small random scenes, cameras and a central-difference helper"""

from pathlib import Path
import sys

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from app.core.config import settings  # noqa: E402
from app.models.domain import Camera, Pose, PVGaussian, SceneModel  # noqa: E402
from app.services.geometry import quat_normalize  # noqa: E402

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def make_camera(width: int = 32, height: int = 24, fx: float = 30.0, pose: Pose = None) -> Camera:
    return Camera(
        pose=pose or Pose(IDENTITY, np.zeros(3)),
        fx=fx,
        fy=fx,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
    )


def random_gaussians(rng: np.random.Generator, n: int, cam: Camera, depth=(3.0, 6.0)) -> PVGaussian:
    """Primitives spread over the view of cam (assumed at the origin looking down +z)"""
    z = rng.uniform(*depth, n)
    half_w = 0.4 * cam.width / cam.fx
    half_h = 0.4 * cam.height / cam.fy
    mu = np.stack([rng.uniform(-half_w, half_w, n) * z, rng.uniform(-half_h, half_h, n) * z, z], axis=-1)
    return PVGaussian(
        mu=mu,
        rot=quat_normalize(rng.normal(size=(n, 4))),
        log_scale=np.log(rng.uniform(0.08, 0.3, (n, 3))),
        opacity_logit=rng.uniform(-1.0, 1.5, n),
        color=rng.uniform(0.0, 1.0, (n, 3)),
        velocity=rng.normal(scale=0.3, size=(n, 3)),
        tau=rng.uniform(0.0, 1.0, n),
        log_beta=np.log(rng.uniform(0.3, 1.0, n)),
    )


def random_scene(rng: np.random.Generator, n: int = 6, cam: Camera = None, background=(0.1, 0.2, 0.3)) -> SceneModel:
    cam = cam or make_camera()
    return SceneModel(gaussians=random_gaussians(rng, n, cam), cycle_length=0.3, background=np.asarray(background))


def central_difference(loss, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """d loss() / d array, perturbing array in place one entry at a time"""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        up = loss()
        flat[i] = saved - eps
        down = loss()
        flat[i] = saved
        out[i] = (up - down) / (2.0 * eps)
    return grad


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def camera() -> Camera:
    return make_camera()


@pytest.fixture
def smooth_alpha(monkeypatch):
    """Removes the 1/255 alpha cutoff so the render is differentiable everywhere"""
    monkeypatch.setattr(settings, "ALPHA_MIN", 1e-300)


@pytest.fixture
def threads(monkeypatch):
    def set_threads(n: int) -> None:
        monkeypatch.setattr(settings, "PVG4D_THREADS", n)

    return set_threads


@pytest.fixture(scope="session")
def smoke():
    """(gt scene, capture) of the four-frame smoke benchmark"""
    from app.services.scene_synth import SceneSynthService, smoke_benchmark

    scene_spec, capture_spec = smoke_benchmark()[0]
    scene = SceneSynthService.make_scene(scene_spec, capture_spec.n_frames, seed=0)
    return scene, SceneSynthService.make_capture(scene, capture_spec, name=scene_spec.name, seed=0)
