"""
Uncertainty-weighted distillation of pseudo-frames.

    L_ca = mean_p  omega_f (beta_e(p) e(p) - lambda_f beta_e(p)^2)
    L_tv = omega_tv mean_p (|dx beta_e| + |dy beta_e|)

with e(p) the channel-summed squared residual between the render and the
pseudo-frame. L_ca is concave in beta_e; its stationary point
e / (2 lambda_f) is what the map is driven to, so the map follows the
ascent direction of L_ca (and descends L_tv) while the scene and delta_t
descend L_ca.
"""

from dataclasses import dataclass

import numpy as np

from app.core.errors import ResolutionMismatch
from app.models.domain import (
    Camera,
    GradientBuffer,
    PosePair,
    PseudoFrame,
    RenderOutput,
    SceneModel,
    TimestampParam,
    UncertaintyMap,
)
from app.models.schemas import DistillWeights
from app.services.pose_interp import dloss_d_delta_t, interp_pose
from app.services.rasterizer import render_downsampled, render_downsampled_backward


@dataclass
class CALoss:
    loss: float
    grad_image: np.ndarray  # dL/d rendered image
    grad_beta: np.ndarray   # dL/d exposed beta_e
    residual: np.ndarray    # channel-summed squared error per pixel


@dataclass
class TVLoss:
    loss: float
    grad_beta: np.ndarray


def _residual(render: RenderOutput, pseudo: PseudoFrame) -> np.ndarray:
    if render.image.shape != pseudo.image.shape:
        raise ResolutionMismatch(
            f"render {render.image.shape} does not match pseudo-frame {pseudo.image.shape}"
        )
    return render.image - pseudo.image


def l_ca(render: RenderOutput, pseudo: PseudoFrame, umap: UncertaintyMap, w: DistillWeights) -> CALoss:
    diff = _residual(render, pseudo)
    if umap.shape != diff.shape[:2]:
        raise ResolutionMismatch(f"uncertainty map {umap.shape} does not match pseudo-frame {diff.shape[:2]}")
    beta = umap.exposed()
    err = np.sum(diff * diff, axis=-1)
    n_pix = err.size
    loss = float(np.mean(w.omega_f * (beta * err - w.lambda_f * beta * beta)))
    grad_image = (w.omega_f / n_pix) * beta[..., None] * 2.0 * diff
    grad_beta = (w.omega_f / n_pix) * (err - 2.0 * w.lambda_f * beta)
    return CALoss(loss=loss, grad_image=grad_image, grad_beta=grad_beta, residual=err)


def beta_opt(render: RenderOutput, pseudo: PseudoFrame, lambda_f: float) -> np.ndarray:
    """Stationary point of L_ca in beta_e for a frozen render"""
    if lambda_f <= 0:
        raise ValueError(f"lambda_f must be positive, got {lambda_f}")
    diff = _residual(render, pseudo)
    return np.sum(diff * diff, axis=-1) / (2.0 * lambda_f)


def l_tv(umap: UncertaintyMap, omega_tv: float) -> TVLoss:
    """Anisotropic L1 total variation of the exposed map, averaged over pixels"""
    beta = umap.exposed()
    n_pix = beta.size
    grad = np.zeros_like(beta)
    total = 0.0
    if beta.shape[1] > 1:
        dx = beta[:, 1:] - beta[:, :-1]
        total += float(np.sum(np.abs(dx)))
        sx = np.sign(dx)
        grad[:, 1:] += sx
        grad[:, :-1] -= sx
    if beta.shape[0] > 1:
        dy = beta[1:, :] - beta[:-1, :]
        total += float(np.sum(np.abs(dy)))
        sy = np.sign(dy)
        grad[1:, :] += sy
        grad[:-1, :] -= sy
    scale = omega_tv / n_pix
    return TVLoss(loss=scale * total, grad_beta=scale * grad)


def umap_descent_gradient(ca: CALoss, tv: TVLoss, umap: UncertaintyMap) -> np.ndarray:
    """Gradient on the raw map values for a descent-based optimizer (ascent on L_ca, descent on L_tv)"""
    return (tv.grad_beta - ca.grad_beta) * umap.exposed_grad()


@dataclass
class DistillResult:
    ca_loss: float
    tv_loss: float
    scene_grads: GradientBuffer
    delta_t_grad: float
    umap_grad: np.ndarray
    s: float
    t_mid: float


def distill_step(
    scene: SceneModel,
    camera: Camera,
    pair: PosePair,
    tsp: TimestampParam,
    pseudo: PseudoFrame,
    umap: UncertaintyMap,
    w: DistillWeights,
) -> DistillResult:
    """interp_pose -> render_downsampled -> L_ca + L_tv -> render backward, in one pass"""
    pose, t_mid = interp_pose(pair, tsp)
    cam = camera.with_pose(pose)
    rendered = render_downsampled(scene, cam, t_mid, pseudo.factor)

    ca = l_ca(rendered, pseudo, umap, w)
    tv = l_tv(umap, w.omega_tv)
    grads = render_downsampled_backward(scene, cam, t_mid, pseudo.factor, ca.grad_image)

    return DistillResult(
        ca_loss=ca.loss,
        tv_loss=tv.loss,
        scene_grads=grads,
        delta_t_grad=dloss_d_delta_t(grads, pair, tsp),
        umap_grad=umap_descent_gradient(ca, tv, umap),
        s=tsp.s,
        t_mid=t_mid,
    )
