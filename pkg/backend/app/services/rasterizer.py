"""
Per-pixel exact splatting of PVG scenes and its analytic adjoint.

Forward, per pixel, front to back over depth-sorted primitives:

    alpha_i = peak_i * exp(-0.5 d^T A_i d)    (skipped when < ALPHA_MIN)
    C       = sum_i c_i alpha_i T_i + T_final * background

The image is processed in fixed row tiles (settings.TILE_ROWS) so that the
worker pool can split the work without changing a single bit of the output.
Pixel reductions use sequential cumulative sums, which makes per-tile
culling of primitives that cannot reach ALPHA_MIN exact as well.

The backward pass recomputes the forward state tile by tile and returns the
gradient of sum(grad_image * image) w.r.t. every PVGaussian field, the
camera rotation quaternion, the camera centre and the render time.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple
import logging

import numpy as np

from app.core.config import settings
from app.core.errors import ResolutionMismatch
from app.core.parallel import get_pool, row_tiles
from app.models.domain import Camera, GradientBuffer, PVGaussian, RenderOutput, SceneModel
from app.services.geometry import (
    _jacobian,
    build_covariance,
    build_covariance_vjp,
    project_covariance,
    rotation_vjp,
)
from app.services.pvg import opacity_at, opacity_at_vjp, position_at, position_at_vjp

logger = logging.getLogger(__name__)

VALID_FACTORS = (1, 2, 4, 8, 16)


@dataclass
class _Projected:
    """Screen-space splats of the primitives that survive culling, in depth order"""

    order: np.ndarray        # indices into the scene, sorted by depth
    mu_t: np.ndarray         # (n, 3) world position at t
    p_cam: np.ndarray        # (n, 3)
    J: np.ndarray            # (n, 2, 3)
    cov3: np.ndarray         # (n, 3, 3)
    cov2: np.ndarray         # (n, 2, 2)
    conic: np.ndarray        # (n, 3) a, b, c of the inverse 2D covariance
    center: np.ndarray       # (n, 2)
    opacity_t: np.ndarray    # (n,) unclamped opacity at t
    peak: np.ndarray         # (n,) clamped peak alpha
    color: np.ndarray        # (n, 3)
    radius: np.ndarray       # (n,) footprint beyond which alpha < ALPHA_MIN
    W: np.ndarray            # (3, 3) world-to-camera rotation

    @property
    def count(self) -> int:
        return int(self.order.shape[0])


def _preprocess(scene: SceneModel, cam: Camera, t: float) -> _Projected:
    g = scene.gaussians
    W = cam.pose.view_rotation()

    mu_t = position_at(g, t, scene.cycle_length).reshape(-1, 3)
    p_cam = (mu_t - cam.pose.translation) @ W.T
    z = p_cam[:, 2]
    o_t = np.atleast_1d(opacity_at(g, t))

    # DegenerateDepth primitives and ones too faint to reach any pixel are culled
    keep = np.nonzero((z > settings.NEAR_PLANE) & (o_t >= settings.ALPHA_MIN))[0]
    order = keep[np.argsort(z[keep], kind="stable")]

    p_sel = p_cam[order]
    x, y, zs = p_sel[:, 0], p_sel[:, 1], p_sel[:, 2]
    J = _jacobian(cam.fx, cam.fy, x, y, zs)
    cov3 = build_covariance(np.reshape(g.log_scale, (-1, 3))[order], np.reshape(g.rot, (-1, 4))[order])
    cov2 = project_covariance(cov3, W, J)

    s00, s01, s11 = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = s00 * s11 - s01 * s01
    conic = np.stack([s11 / det, -s01 / det, s00 / det], axis=-1)
    center = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=-1)

    peak = np.minimum(o_t[order], settings.ALPHA_MAX)
    half_trace = 0.5 * (s00 + s11)
    lam_max = half_trace + np.sqrt(np.maximum(0.25 * (s00 - s11) ** 2 + s01 * s01, 0.0))
    reach = 2.0 * np.log(np.maximum(peak / settings.ALPHA_MIN, 1.0))
    radius = np.sqrt(reach * lam_max) * (1.0 + 1e-6) + 1e-6

    return _Projected(
        order=order,
        mu_t=mu_t[order],
        p_cam=p_sel,
        J=J,
        cov3=cov3,
        cov2=cov2,
        conic=conic,
        center=center,
        opacity_t=o_t[order],
        peak=peak,
        color=np.reshape(g.color, (-1, 3))[order],
        radius=radius,
        W=W,
    )


def _tile_members(proj: _Projected, width: int, r0: int, r1: int) -> np.ndarray:
    cx, cy, rad = proj.center[:, 0], proj.center[:, 1], proj.radius
    hit = (
        (cy + rad >= r0)
        & (cy - rad <= r1 - 1)
        & (cx + rad >= 0)
        & (cx - rad <= width - 1)
    )
    return np.nonzero(hit)[0]


@dataclass
class _TileState:
    members: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    G: np.ndarray
    alpha: np.ndarray
    T: np.ndarray
    T_final: np.ndarray
    image: np.ndarray


def _tile_forward(proj: _Projected, width: int, r0: int, r1: int, background: np.ndarray) -> _TileState:
    ys, xs = np.meshgrid(np.arange(r0, r1, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    px, py = xs.ravel(), ys.ravel()
    n_pix = px.shape[0]

    members = _tile_members(proj, width, r0, r1)
    if members.shape[0] == 0:
        image = np.broadcast_to(background, (n_pix, 3)).copy()
        empty = np.zeros((0, n_pix))
        return _TileState(members, empty, empty, empty, empty, empty, np.ones(n_pix), image)

    a, b, c = (proj.conic[members, k][:, None] for k in range(3))
    dx = px[None, :] - proj.center[members, 0][:, None]
    dy = py[None, :] - proj.center[members, 1][:, None]
    G = np.exp(-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy))
    alpha = proj.peak[members][:, None] * G
    alpha = np.where(alpha >= settings.ALPHA_MIN, alpha, 0.0)

    T_incl = np.cumprod(1.0 - alpha, axis=0)
    T = np.vstack([np.ones((1, n_pix)), T_incl[:-1]])
    T_final = T_incl[-1]

    weights = alpha * T
    contrib = weights[:, :, None] * proj.color[members][:, None, :]
    image = np.cumsum(contrib, axis=0)[-1] + T_final[:, None] * background
    return _TileState(members, dx, dy, G, alpha, T, T_final, image)


def _tile_depth(proj: _Projected, state: _TileState) -> np.ndarray:
    if state.members.shape[0] == 0:
        return np.zeros_like(state.T_final)
    weights = state.alpha * state.T
    depth_sum = np.cumsum(weights * proj.p_cam[state.members, 2][:, None], axis=0)[-1]
    alpha_map = 1.0 - state.T_final
    safe = np.where(alpha_map > 0.0, alpha_map, 1.0)
    return np.where(alpha_map > 0.0, depth_sum / safe, 0.0)


def _assemble(parts: List[np.ndarray], height: int, width: int, channels: Optional[int] = None) -> np.ndarray:
    flat = np.concatenate(parts, axis=0)
    shape = (height, width) if channels is None else (height, width, channels)
    return flat.reshape(shape)


def render(scene: SceneModel, cam: Camera, t: float) -> RenderOutput:
    """Composite the scene at time t seen from cam"""
    H, W = cam.height, cam.width
    if scene.count == 0:
        return RenderOutput(
            image=np.broadcast_to(scene.background, (H, W, 3)).copy(),
            depth_map=np.zeros((H, W)),
            alpha_map=np.zeros((H, W)),
        )

    proj = _preprocess(scene, cam, t)
    tiles = row_tiles(H)

    def run(tile: Tuple[int, int]):
        state = _tile_forward(proj, W, tile[0], tile[1], scene.background)
        return state.image, 1.0 - state.T_final, _tile_depth(proj, state)

    results = get_pool().map(run, tiles)
    return RenderOutput(
        image=_assemble([r[0] for r in results], H, W, 3),
        depth_map=_assemble([r[2] for r in results], H, W),
        alpha_map=_assemble([r[1] for r in results], H, W),
    )


@dataclass
class _TileGrads:
    members: np.ndarray
    color: np.ndarray
    peak: np.ndarray
    conic: np.ndarray
    center: np.ndarray


def _tile_backward(
    proj: _Projected, width: int, r0: int, r1: int, background: np.ndarray, grad_rows: np.ndarray
) -> _TileGrads:
    state = _tile_forward(proj, width, r0, r1, background)
    m = state.members
    if m.shape[0] == 0:
        return _TileGrads(m, np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 2)))

    g_img = grad_rows.reshape(-1, 3)
    color = proj.color[m]
    weights = state.alpha * state.T
    contrib = weights[:, :, None] * color[:, None, :]
    # colour still to come behind primitive i (excluding i itself)
    behind = state.image[None, :, :] - np.cumsum(contrib, axis=0)
    one_minus = 1.0 - state.alpha

    d_alpha = state.T[:, :, None] * color[:, None, :] - behind / one_minus[:, :, None]
    g_alpha = np.einsum("npc,pc->np", d_alpha, g_img)
    g_alpha = np.where(state.alpha > 0.0, g_alpha, 0.0)

    g_color = weights @ g_img
    g_peak = np.sum(g_alpha * state.G, axis=1)

    peak = proj.peak[m][:, None]
    g_q = -0.5 * state.G * g_alpha * peak
    dx, dy = state.dx, state.dy
    a, b, c = (proj.conic[m, k][:, None] for k in range(3))
    g_conic = np.stack(
        [
            np.sum(g_q * dx * dx, axis=1),
            np.sum(g_q * 2.0 * dx * dy, axis=1),
            np.sum(g_q * dy * dy, axis=1),
        ],
        axis=-1,
    )
    g_center = np.stack(
        [
            np.sum(g_q * -2.0 * (a * dx + b * dy), axis=1),
            np.sum(g_q * -2.0 * (b * dx + c * dy), axis=1),
        ],
        axis=-1,
    )
    return _TileGrads(m, g_color, g_peak, g_conic, g_center)


def render_backward(scene: SceneModel, cam: Camera, t: float, grad_image: np.ndarray) -> GradientBuffer:
    """Exact adjoint of render for the image output"""
    H, W = cam.height, cam.width
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (H, W, 3):
        raise ResolutionMismatch(f"gradient image {grad_image.shape} does not match camera {(H, W, 3)}")

    buffer = GradientBuffer.zeros(scene)
    if scene.count == 0:
        return buffer

    proj = _preprocess(scene, cam, t)
    n = proj.count
    if n == 0:
        return buffer

    tiles = row_tiles(H)
    parts = get_pool().map(
        lambda tile: _tile_backward(proj, W, tile[0], tile[1], scene.background, grad_image[tile[0]:tile[1]]),
        tiles,
    )

    g_color = np.zeros((n, 3))
    g_peak = np.zeros(n)
    g_conic = np.zeros((n, 3))
    g_center = np.zeros((n, 2))
    for part in parts:
        g_color[part.members] += part.color
        g_peak[part.members] += part.peak
        g_conic[part.members] += part.conic
        g_center[part.members] += part.center

    _chain_to_parameters(scene, cam, t, proj, g_color, g_peak, g_conic, g_center, buffer)
    return buffer


def _chain_to_parameters(
    scene: SceneModel,
    cam: Camera,
    t: float,
    proj: _Projected,
    g_color: np.ndarray,
    g_peak: np.ndarray,
    g_conic: np.ndarray,
    g_center: np.ndarray,
    buffer: GradientBuffer,
) -> None:
    order, W = proj.order, proj.W
    g_sel = scene.gaussians.select(order) if scene.gaussians.is_batched else scene.gaussians

    # conic -> 2D covariance
    a, b, c = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    A = np.stack([a, b, b, c], axis=-1).reshape(-1, 2, 2)
    A_bar = np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1], 0.5 * g_conic[:, 1], g_conic[:, 2]], axis=-1)
    cov2_bar = -A @ A_bar.reshape(-1, 2, 2) @ A

    # 2D covariance -> J and the view-space covariance M = W cov3 W^T
    J = proj.J
    M = W @ proj.cov3 @ W.T
    J_bar = 2.0 * cov2_bar @ J @ M
    M_bar = np.swapaxes(J, -1, -2) @ cov2_bar @ J
    cov3_bar = W.T @ M_bar @ W
    W_bar = np.sum(2.0 * M_bar @ W @ proj.cov3, axis=0)

    s_bar, rot_bar = build_covariance_vjp(
        np.reshape(g_sel.log_scale, (-1, 3)), np.reshape(g_sel.rot, (-1, 4)), cov3_bar
    )

    # centre and Jacobian -> camera-space position
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    fx, fy = cam.fx, cam.fy
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    inv_z3 = inv_z2 * inv_z
    u_bar, v_bar = g_center[:, 0], g_center[:, 1]
    x_bar = u_bar * fx * inv_z - J_bar[:, 0, 2] * fx * inv_z2
    y_bar = v_bar * fy * inv_z - J_bar[:, 1, 2] * fy * inv_z2
    z_bar = (
        -u_bar * fx * x * inv_z2
        - v_bar * fy * y * inv_z2
        - J_bar[:, 0, 0] * fx * inv_z2
        + J_bar[:, 0, 2] * 2.0 * fx * x * inv_z3
        - J_bar[:, 1, 1] * fy * inv_z2
        + J_bar[:, 1, 2] * 2.0 * fy * y * inv_z3
    )
    p_bar = np.stack([x_bar, y_bar, z_bar], axis=-1)

    # p_cam = W (mu_t - T)
    offset = proj.mu_t - cam.pose.translation
    mu_t_bar = p_bar @ W
    W_bar = W_bar + p_bar.T @ offset
    buffer.pose_translation = -np.sum(mu_t_bar, axis=0)
    buffer.pose_rotation = rotation_vjp(cam.pose.rotation, W_bar.T)

    # peak alpha -> opacity at t (the ALPHA_MAX clamp blocks the gradient)
    o_bar = np.where(proj.opacity_t < settings.ALPHA_MAX, g_peak, 0.0)
    pos_adj = position_at_vjp(g_sel, t, scene.cycle_length, mu_t_bar)
    op_adj = opacity_at_vjp(g_sel, t, o_bar)
    buffer.time = pos_adj.t + op_adj.t

    grads = buffer.gaussians
    if not grads.is_batched:
        if order.shape[0] == 1:
            _store_single(grads, pos_adj, op_adj, s_bar, rot_bar, g_color)
        return
    grads.mu[order] = pos_adj.mu
    grads.velocity[order] = pos_adj.velocity
    grads.tau[order] = pos_adj.tau + op_adj.tau
    grads.opacity_logit[order] = op_adj.opacity_logit
    grads.log_beta[order] = op_adj.log_beta
    grads.log_scale[order] = s_bar
    grads.rot[order] = rot_bar
    grads.color[order] = g_color


def _store_single(grads: PVGaussian, pos_adj, op_adj, s_bar, rot_bar, g_color) -> None:
    grads.mu[...] = np.reshape(pos_adj.mu, 3)
    grads.velocity[...] = np.reshape(pos_adj.velocity, 3)
    grads.tau[...] = np.reshape(pos_adj.tau + op_adj.tau, ())
    grads.opacity_logit[...] = np.reshape(op_adj.opacity_logit, ())
    grads.log_beta[...] = np.reshape(op_adj.log_beta, ())
    grads.log_scale[...] = s_bar[0]
    grads.rot[...] = rot_bar[0]
    grads.color[...] = g_color[0]


def _check_factor(cam: Camera, factor: int) -> None:
    if factor not in VALID_FACTORS:
        raise ResolutionMismatch(f"downsample factor {factor} not in {VALID_FACTORS}")
    if cam.width % factor or cam.height % factor:
        raise ResolutionMismatch(f"{cam.width}x{cam.height} image is not divisible by factor {factor}")


def render_downsampled(scene: SceneModel, cam: Camera, t: float, factor: int) -> RenderOutput:
    _check_factor(cam, factor)
    return render(scene, cam.scaled(factor), t)


def render_downsampled_backward(
    scene: SceneModel, cam: Camera, t: float, factor: int, grad_image: np.ndarray
) -> GradientBuffer:
    _check_factor(cam, factor)
    return render_backward(scene, cam.scaled(factor), t, grad_image)


def box_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Mean over factor x factor blocks"""
    if factor == 1:
        return np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    if H % factor or W % factor:
        raise ResolutionMismatch(f"{W}x{H} image is not divisible by factor {factor}")
    blocks = np.asarray(image, dtype=np.float64).reshape(
        (H // factor, factor, W // factor, factor) + image.shape[2:]
    )
    return blocks.mean(axis=(1, 3))


def render_labels(scene: SceneModel, cam: Camera, t: float, label: int, threshold: float = 0.5) -> np.ndarray:
    """Boolean coverage mask of one ground-truth object rendered on its own"""
    if scene.labels is None:
        return np.zeros((cam.height, cam.width), dtype=bool)
    subset = scene.select(np.nonzero(scene.labels == label)[0])
    return render(subset, cam, t).alpha_map >= threshold
