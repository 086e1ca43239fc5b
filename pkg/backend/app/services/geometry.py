"""
Quaternion/rotation algebra, covariance construction and perspective
projection Jacobians.

Quaternions are (w, x, y, z). All functions broadcast over leading batch
dimensions so the rasterizer can call them on whole Gaussian sets.
"""

from typing import Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import DegenerateDepth
from app.models.domain import Camera


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (normalized internally) quaternion; q and -q agree"""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2 (apply q2 first)"""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=np.float64), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=np.float64), -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_angle(q_a: np.ndarray, q_b: np.ndarray) -> float:
    """Rotation angle between two orientations (radians, in [0, pi])"""
    d = abs(float(np.dot(quat_normalize(q_a), quat_normalize(q_b))))
    return 2.0 * float(np.arccos(min(1.0, d)))


def rotation_vjp(q: np.ndarray, R_bar: np.ndarray) -> np.ndarray:
    """
    Adjoint of quat_to_rotation: given dL/dR, return dL/dq for the raw
    (possibly unnormalized) quaternion, including the normalization.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    G = np.asarray(R_bar, dtype=np.float64)
    g = lambda i, j: G[..., i, j]  # noqa: E731

    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (
        y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1)
        - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2)
    )
    dy = 2 * (
        -2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0)
        + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2)
    )
    dz = 2 * (
        -2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0)
        - 2 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1)
    )
    qn_bar = np.stack([dw, dx, dy, dz], axis=-1)
    # through q / |q|
    radial = np.sum(qn_bar * qn, axis=-1, keepdims=True)
    return (qn_bar - qn * radial) / norm


def build_covariance(s: np.ndarray, q: np.ndarray) -> np.ndarray:
    """R diag(exp(s))^2 R^T from log-scales and a rotation quaternion"""
    R = quat_to_rotation(q)
    variances = np.exp(2.0 * np.asarray(s, dtype=np.float64))
    cov = np.einsum("...ij,...j,...kj->...ik", R, variances, R)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def build_covariance_vjp(
    s: np.ndarray, q: np.ndarray, cov_bar: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Adjoint of build_covariance w.r.t. (log-scale, quaternion)"""
    R = quat_to_rotation(q)
    variances = np.exp(2.0 * np.asarray(s, dtype=np.float64))
    cov_bar = 0.5 * (cov_bar + np.swapaxes(cov_bar, -1, -2))
    # d/dD of R D R^T is R^T cov_bar R (diagonal part)
    inner = np.einsum("...ji,...jk,...kl->...il", R, cov_bar, R)
    s_bar = 2.0 * variances * np.diagonal(inner, axis1=-2, axis2=-1)
    R_bar = 2.0 * np.einsum("...ij,...jk,...k->...ik", cov_bar, R, variances)
    return s_bar, rotation_vjp(q, R_bar)


def projection_jacobian(cam: Camera, p_cam: np.ndarray, near: float = None) -> np.ndarray:
    """2x3 Jacobian of the pinhole projection at a camera-space point"""
    near = settings.NEAR_PLANE if near is None else near
    p_cam = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    if np.any(z <= near):
        raise DegenerateDepth(f"camera-space depth {np.min(z):.3g} at or behind near plane {near}")
    return _jacobian(cam.fx, cam.fy, x, y, z)


def _jacobian(fx: float, fy: float, x, y, z) -> np.ndarray:
    zeros = np.zeros_like(z)
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    J = np.stack(
        [fx * inv_z, zeros, -fx * x * inv_z2, zeros, fy * inv_z, -fy * y * inv_z2],
        axis=-1,
    )
    return J.reshape(z.shape + (2, 3))


def project_covariance(
    cov: np.ndarray, W_rot: np.ndarray, J: np.ndarray, floor: float = None
) -> np.ndarray:
    """J W cov W^T J^T, symmetrized, plus the low-pass floor on the diagonal"""
    floor = settings.COVARIANCE_FLOOR if floor is None else floor
    T = J @ W_rot
    cov2 = T @ cov @ np.swapaxes(T, -1, -2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, -1, -2))
    return cov2 + floor * np.eye(2)


def project_points(cam: Camera, p_world: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (x = column, y = row) and camera-space depth of world points"""
    p_world = np.asarray(p_world, dtype=np.float64)
    view = cam.pose.view_matrix()
    p_cam = p_world @ view[:3, :3].T + view[:3, 3]
    z = p_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p_cam[..., 0] / z + cam.cx
        v = cam.fy * p_cam[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1), z
