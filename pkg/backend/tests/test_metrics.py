import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.core.errors import ResolutionMismatch
from app.services.metrics import PSNR_IDENTICAL, gms_ssim_proxy, image_metrics, psnr, ssim, ssim_with_grad
from app.services.training import photometric_loss
from conftest import central_difference

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_psnr_identical_images(rng):
    img = rng.uniform(size=(8, 8, 3))
    assert psnr(img, img.copy()) == PSNR_IDENTICAL


def test_psnr_constant_offset():
    a = np.full((6, 6, 3), 0.4)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_rejects_resolution_mismatch():
    with pytest.raises(ResolutionMismatch):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identical_images(rng):
    img = rng.uniform(size=(12, 10, 3))
    assert ssim(img, img.copy()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_ssim_is_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(9, 11, 3))
    b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0.0, 1.0)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) < 1.0


def test_ssim_drops_with_noise(rng):
    img = rng.uniform(size=(16, 16, 3))
    slight = np.clip(img + rng.normal(scale=0.02, size=img.shape), 0, 1)
    heavy = np.clip(img + rng.normal(scale=0.3, size=img.shape), 0, 1)
    assert ssim(img, slight) > ssim(img, heavy)


def test_ssim_gradient_matches_finite_differences(rng):
    x = rng.uniform(size=(7, 8, 3))
    y = rng.uniform(size=(7, 8, 3))
    value, grad = ssim_with_grad(x, y)
    assert value == pytest.approx(ssim(x, y), abs=1e-12)
    numeric = central_difference(lambda: ssim(x, y), x)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


def test_gms_proxy_identical_is_zero(rng):
    img = rng.uniform(size=(10, 10, 3))
    assert gms_ssim_proxy(img, img.copy()) == pytest.approx(0.0, abs=1e-12)


def test_gms_proxy_flat_reference_falls_back_to_ssim(rng):
    flat = np.full((8, 8, 3), 0.5)
    other = rng.uniform(size=(8, 8, 3))
    assert gms_ssim_proxy(other, flat) == pytest.approx(1.0 - ssim(other, flat), abs=1e-12)


def test_image_metrics_keys(rng):
    img = rng.uniform(size=(8, 8, 3))
    assert set(image_metrics(img, img)) == {"psnr", "ssim", "gms_ssim_proxy"}


def test_photometric_loss_of_equal_images(rng):
    img = rng.uniform(size=(8, 8, 3))
    loss, grad = photometric_loss(img, img.copy())
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.abs(grad).max() < 1e-12


def test_photometric_gradient_matches_finite_differences(rng):
    gt = rng.uniform(0.2, 0.8, size=(7, 9, 3))
    # keep every residual away from the L1 kink
    rendered = gt + rng.uniform(0.05, 0.15, gt.shape) * rng.choice([-1.0, 1.0], gt.shape)
    _, grad = photometric_loss(rendered, gt)
    numeric = central_difference(lambda: photometric_loss(rendered, gt)[0], rendered)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


def test_photometric_loss_weights():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.25)
    loss, _ = photometric_loss(a, b, l1_w=1.0, ssim_w=0.0)
    assert loss == pytest.approx(0.25)
