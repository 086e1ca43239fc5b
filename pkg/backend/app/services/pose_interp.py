"""
Camera pose interpolation between adjacent frames, driven by one learnable
timestamp bias per pseudo-frame.

    s      = sigmoid(delta_t)
    q(s)   = normalize((1 - s) q_t + s q_t+1)     (hemisphere aligned)
    T(s)   = (1 - s) T_t + s T_t+1
    t(s)   = t_start + s (t_end - t_start)
"""

from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from app.models.domain import GradientBuffer, Pose, PosePair, TimestampParam
from app.services.geometry import quat_from_axis_angle, quat_normalize
from app.services.pvg import sigmoid

SLERP_EPS = 1e-6


def align_hemisphere(q_a: np.ndarray, q_b: np.ndarray) -> np.ndarray:
    """q_b, negated if needed so that dot(q_a, q_b) >= 0"""
    q_b = np.asarray(q_b, dtype=np.float64)
    return -q_b if float(np.dot(q_a, q_b)) < 0.0 else q_b


def slerp_exact(q_a: np.ndarray, q_b: np.ndarray, s: float) -> np.ndarray:
    q_a = quat_normalize(q_a)
    q_b = align_hemisphere(q_a, quat_normalize(q_b))
    theta = float(np.arccos(np.clip(np.dot(q_a, q_b), -1.0, 1.0)))
    if theta < SLERP_EPS:
        return lerp_quat(q_a, q_b, s)
    sin_theta = np.sin(theta)
    return (np.sin((1.0 - s) * theta) * q_a + np.sin(s * theta) * q_b) / sin_theta


def lerp_quat(q_a: np.ndarray, q_b: np.ndarray, s: float) -> np.ndarray:
    u = (1.0 - s) * np.asarray(q_a, dtype=np.float64) + s * np.asarray(q_b, dtype=np.float64)
    return u / np.linalg.norm(u)


def lerp_quat_derivative(q_a: np.ndarray, q_b: np.ndarray, s: float) -> np.ndarray:
    """d/ds of lerp_quat, through the normalization"""
    q_a = np.asarray(q_a, dtype=np.float64)
    q_b = np.asarray(q_b, dtype=np.float64)
    u = (1.0 - s) * q_a + s * q_b
    norm = np.linalg.norm(u)
    q = u / norm
    du = q_b - q_a
    return (du - q * np.dot(q, du)) / norm


def interp_pose_at(pair: PosePair, s: float) -> Tuple[Pose, float]:
    q_a = pair.p_start.rotation
    q_b = align_hemisphere(q_a, pair.p_end.rotation)
    rotation = lerp_quat(q_a, q_b, s)
    translation = (1.0 - s) * pair.p_start.translation + s * pair.p_end.translation
    t_mid = pair.t_start + s * (pair.t_end - pair.t_start)
    return Pose(rotation=rotation, translation=translation), float(t_mid)


def interp_pose(pair: PosePair, tsp: TimestampParam) -> Tuple[Pose, float]:
    return interp_pose_at(pair, float(sigmoid(tsp.delta_t)))


def interp_pose_tangent(pair: PosePair, s: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """(dq/ds, dT/ds, dt/ds) of the interpolated pose"""
    q_a = pair.p_start.rotation
    q_b = align_hemisphere(q_a, pair.p_end.rotation)
    return (
        lerp_quat_derivative(q_a, q_b, s),
        pair.p_end.translation - pair.p_start.translation,
        float(pair.t_end - pair.t_start),
    )


def dloss_d_delta_t(pose_grad: GradientBuffer, pair: PosePair, tsp: TimestampParam) -> float:
    """Chain a render's pose and time gradients back to delta_t"""
    s = float(sigmoid(tsp.delta_t))
    dq, dT, dt = interp_pose_tangent(pair, s)
    d_s = (
        float(np.dot(pose_grad.pose_rotation, dq))
        + float(np.dot(pose_grad.pose_translation, dT))
        + float(pose_grad.time) * dt
    )
    return d_s * s * (1.0 - s)


def slerp_deviation_curve(
    angles_deg: Sequence[float] = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 45.0, 60.0),
    s_grid: Sequence[float] = tuple(np.linspace(0.0, 1.0, 11)),
    axis: Sequence[float] = (0.0, 0.0, 1.0),
) -> pd.DataFrame:
    """Max componentwise |lerp - slerp| per rotation angle between the endpoints"""
    q_a = np.array([1.0, 0.0, 0.0, 0.0])
    rows: List[dict] = []
    for angle in angles_deg:
        q_b = quat_from_axis_angle(axis, np.deg2rad(angle))
        deviation = max(
            float(np.max(np.abs(lerp_quat(q_a, q_b, s) - slerp_exact(q_a, q_b, s)))) for s in s_grid
        )
        rows.append({"angle_deg": float(angle), "max_deviation": deviation})
    return pd.DataFrame(rows)
