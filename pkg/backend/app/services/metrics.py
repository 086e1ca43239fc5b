"""
Image quality metrics: PSNR, SSIM (with its gradient for the photometric
loss) and a gradient-magnitude-weighted SSIM dissimilarity.

gms_ssim_proxy is a perceptual-distance stand-in that needs no pretrained
network. It is reported under its own name and is not LPIPS.
"""

from typing import Tuple

import numpy as np
from scipy import ndimage

from app.core.errors import ResolutionMismatch

PSNR_IDENTICAL = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5


def check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ResolutionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def _window() -> np.ndarray:
    x = np.arange(WINDOW_SIZE, dtype=np.float64) - (WINDOW_SIZE - 1) / 2.0
    k = np.exp(-0.5 * (x / WINDOW_SIGMA) ** 2)
    return k / k.sum()


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian window over the two spatial axes, zero padded (self-adjoint)"""
    k = _window()
    out = ndimage.correlate1d(img, k, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, k, axis=1, mode="constant", cval=0.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_shapes(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = _blur(x), _blur(y)
    exx, eyy, exy = _blur(x * x), _blur(y * y), _blur(x * y)
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * (exy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    return mx, my, a1, a2, b1, b2


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_shapes(a, b)
    _, _, a1, a2, b1, b2 = _ssim_terms(a, b)
    return (a1 * a2) / (b1 * b2)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(ssim_map(a, b)))


def ssim_with_grad(x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean SSIM and its gradient w.r.t. x"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_shapes(x, y)
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    denom = b1 * b2
    s = (a1 * a2) / denom

    g = 1.0 / s.size
    d_mx = g * (2.0 * my * (a2 - a1) / denom + 2.0 * mx * s * (1.0 / b2 - 1.0 / b1))
    d_exx = g * (-s / b2)
    d_exy = g * (2.0 * a1 / denom)

    grad = _blur(d_mx) + 2.0 * x * _blur(d_exx) + y * _blur(d_exy)
    return float(np.mean(s)), grad


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=-1) if img.ndim == 3 else img


def gms_ssim_proxy(a: np.ndarray, b: np.ndarray) -> float:
    """1 - SSIM averaged with weights from the Sobel gradient magnitude of the reference b"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = ssim_map(a, b)
    s = s.mean(axis=-1) if s.ndim == 3 else s
    ref = _gray(b)
    magnitude = np.hypot(ndimage.sobel(ref, axis=0), ndimage.sobel(ref, axis=1))
    total = float(magnitude.sum())
    if total <= 0.0:
        return float(1.0 - s.mean())
    return float(1.0 - np.sum(magnitude * s) / total)


def image_metrics(rendered: np.ndarray, reference: np.ndarray) -> dict:
    return {
        "psnr": psnr(rendered, reference),
        "ssim": ssim(rendered, reference),
        "gms_ssim_proxy": gms_ssim_proxy(rendered, reference),
    }
