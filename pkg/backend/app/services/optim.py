"""
Bias-corrected Adam over named parameter groups.

Each group keeps its own step count, so groups that are only touched on
some iterations (per-frame delta_t, uncertainty maps) get the same update
they would get from a dedicated optimizer.
"""

from typing import Dict, Iterable, Mapping, Union
import logging

import numpy as np

from app.core.errors import NonFiniteGradient

logger = logging.getLogger(__name__)


class AdamState:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.steps: Dict[str, int] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: Union[float, Mapping[str, float]]) -> None:
        for name, g in grads.items():
            p = params[name]
            rate = lr[name] if isinstance(lr, Mapping) else lr
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.steps[name] = 0
            self.steps[name] += 1
            t = self.steps[name]

            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)

            bc1 = 1.0 - self.beta1 ** t
            bc2 = 1.0 - self.beta2 ** t
            p -= (rate / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def prune_rows(self, keep: np.ndarray, groups: Iterable[str]) -> None:
        """Drop moment rows of removed Gaussians"""
        for name in groups:
            if name in self.m:
                self.m[name] = self.m[name][keep]
                self.v[name] = self.v[name][keep]

    def reset_group(self, name: str) -> None:
        self.m.pop(name, None)
        self.v.pop(name, None)
        self.steps.pop(name, None)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name in self.m:
            arrays[f"adam_m/{name}"] = self.m[name]
            arrays[f"adam_v/{name}"] = self.v[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], steps: Mapping[str, int]) -> "AdamState":
        state = cls()
        for name, count in steps.items():
            state.m[name] = np.array(arrays[f"adam_m/{name}"], dtype=np.float64)
            state.v[name] = np.array(arrays[f"adam_v/{name}"], dtype=np.float64)
            state.steps[name] = int(count)
        return state


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in group '{name}'", group=name)


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: Union[float, Mapping[str, float]],
) -> None:
    """One Adam update; every group is checked before any parameter moves"""
    for name in grads:
        if params[name].shape != np.shape(grads[name]):
            raise ValueError(f"gradient shape {np.shape(grads[name])} does not match '{name}' {params[name].shape}")
    try:
        check_finite(grads)
    except NonFiniteGradient as e:
        logger.error(f"Adam step aborted: {e.detail}")
        raise
    state.step(params, grads, lr)


def expon_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Log-linear decay from lr_init to lr_final over max_steps"""
    if step < 0 or (lr_init == 0.0 and lr_final == 0.0):
        return 0.0
    t = float(np.clip(step / max(max_steps, 1), 0.0, 1.0))
    if lr_init <= 0.0 or lr_final <= 0.0:
        return (1.0 - t) * lr_init + t * lr_final
    return float(np.exp(np.log(lr_init) * (1.0 - t) + np.log(lr_final) * t))
