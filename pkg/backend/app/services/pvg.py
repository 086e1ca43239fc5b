"""
Periodic-vibration Gaussian evaluation.

    position_at(t) = mu + (l / 2pi) sin(2pi (t - tau) / l) v
    opacity_at(t)  = sigmoid(opacity_logit) exp(-0.5 (t - tau)^2 / beta^2)

Both accept a single primitive or a batched set; the *_vjp functions return
the adjoints the rasterizer chains into its backward pass.
"""

from dataclasses import dataclass

import numpy as np

from app.models.domain import PVGaussian


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _phase(g: PVGaussian, t: float, l: float) -> np.ndarray:
    return 2.0 * np.pi * (t - g.tau) / l


def position_at(g: PVGaussian, t: float, l: float) -> np.ndarray:
    if l <= 0:
        raise ValueError(f"cycle length must be positive, got {l}")
    amplitude = (l / (2.0 * np.pi)) * np.sin(_phase(g, t, l))
    return g.mu + np.asarray(amplitude)[..., None] * g.velocity


@dataclass
class PositionAdjoint:
    mu: np.ndarray
    velocity: np.ndarray
    tau: np.ndarray
    t: float


def position_at_vjp(g: PVGaussian, t: float, l: float, mu_t_bar: np.ndarray) -> PositionAdjoint:
    phase = _phase(g, t, l)
    v_dot = np.sum(g.velocity * mu_t_bar, axis=-1)
    cos_phase = np.cos(phase)
    return PositionAdjoint(
        mu=np.array(mu_t_bar, dtype=np.float64),
        velocity=np.asarray((l / (2.0 * np.pi)) * np.sin(phase))[..., None] * mu_t_bar,
        tau=-cos_phase * v_dot,
        t=float(np.sum(cos_phase * v_dot)),
    )


def peak_opacity(g: PVGaussian) -> np.ndarray:
    return sigmoid(g.opacity_logit)


def opacity_at(g: PVGaussian, t: float) -> np.ndarray:
    beta = np.exp(g.log_beta)
    return peak_opacity(g) * np.exp(-0.5 * ((t - g.tau) / beta) ** 2)


@dataclass
class OpacityAdjoint:
    opacity_logit: np.ndarray
    tau: np.ndarray
    log_beta: np.ndarray
    t: float


def opacity_at_vjp(g: PVGaussian, t: float, o_bar: np.ndarray) -> OpacityAdjoint:
    o_peak = peak_opacity(g)
    beta_sq = np.exp(2.0 * g.log_beta)
    dt = t - g.tau
    o_t = o_peak * np.exp(-0.5 * dt * dt / beta_sq)
    scaled = o_bar * o_t
    return OpacityAdjoint(
        opacity_logit=scaled * (1.0 - o_peak),
        tau=scaled * dt / beta_sq,
        log_beta=scaled * dt * dt / beta_sq,
        t=float(np.sum(-scaled * dt / beta_sq)),
    )


def classify_static(g: PVGaussian, threshold: float = 0.5) -> np.ndarray:
    """True where the lifespan reaches the threshold (fraction of the sequence)"""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return np.exp(g.log_beta) >= threshold
