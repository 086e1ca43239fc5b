import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.models.domain import PVGaussian
from app.services.pvg import (
    classify_static,
    opacity_at,
    opacity_at_vjp,
    position_at,
    position_at_vjp,
    sigmoid,
)
from conftest import central_difference, make_camera, random_gaussians

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def single(**overrides) -> PVGaussian:
    fields = dict(
        mu=np.zeros(3),
        rot=np.array([1.0, 0.0, 0.0, 0.0]),
        log_scale=np.zeros(3),
        opacity_logit=0.0,
        color=np.ones(3),
        velocity=np.zeros(3),
        tau=0.0,
        log_beta=0.0,
    )
    fields.update(overrides)
    return PVGaussian(**fields)


def test_position_hand_value():
    g = single(velocity=np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(position_at(g, 0.25, 1.0), [1.0 / (2.0 * np.pi), 0.0, 0.0], atol=1e-15)


def test_zero_velocity_is_static():
    g = single(mu=np.array([1.0, 2.0, 3.0]), tau=0.4)
    for t in np.linspace(0.0, 1.0, 7):
        np.testing.assert_array_equal(position_at(g, t, 0.3), g.mu)


def test_opacity_one_lifespan_from_peak():
    g = single(opacity_logit=2.0, tau=0.5, log_beta=np.log(0.1))
    assert opacity_at(g, 0.6) == pytest.approx(sigmoid(2.0) * np.exp(-0.5), rel=1e-12)


def test_long_lifespan_is_constant():
    g = single(opacity_logit=1.0, log_beta=20.0)
    for t in np.linspace(0.0, 1.0, 5):
        assert abs(opacity_at(g, t) - sigmoid(1.0)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_exact_at_peak_time(seed):
    g = random_gaussians(np.random.default_rng(seed), 5, make_camera())
    for i in range(g.count):
        gi = g[i]
        np.testing.assert_array_equal(position_at(gi, float(gi.tau), 0.3), gi.mu)
        assert opacity_at(gi, float(gi.tau)) == sigmoid(gi.opacity_logit)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(min_value=-3, max_value=3))
def test_position_is_periodic(seed, k):
    g = random_gaussians(np.random.default_rng(seed), 5, make_camera())
    t, l = 0.37, 0.3
    np.testing.assert_allclose(position_at(g, t + k * l, l), position_at(g, t, l), atol=1e-12)


def test_position_rejects_nonpositive_cycle():
    with pytest.raises(ValueError):
        position_at(single(), 0.1, 0.0)


def test_position_vjp_matches_finite_differences(rng):
    g = random_gaussians(rng, 4, make_camera())
    l, t = 0.3, 0.42
    bar = rng.normal(size=(4, 3))
    adj = position_at_vjp(g, t, l, bar)
    loss = lambda: float(np.sum(bar * position_at(g, t, l)))  # noqa: E731
    np.testing.assert_allclose(adj.mu, central_difference(loss, g.mu), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(adj.velocity, central_difference(loss, g.velocity), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(adj.tau, central_difference(loss, g.tau), rtol=1e-5, atol=1e-9)
    t_num = (float(np.sum(bar * position_at(g, t + 1e-6, l))) - float(np.sum(bar * position_at(g, t - 1e-6, l)))) / 2e-6
    assert adj.t == pytest.approx(t_num, rel=1e-5, abs=1e-9)


def test_opacity_vjp_matches_finite_differences(rng):
    g = random_gaussians(rng, 4, make_camera())
    t = 0.61
    bar = rng.normal(size=4)
    adj = opacity_at_vjp(g, t, bar)
    loss = lambda: float(np.sum(bar * opacity_at(g, t)))  # noqa: E731
    np.testing.assert_allclose(adj.opacity_logit, central_difference(loss, g.opacity_logit), rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(adj.tau, central_difference(loss, g.tau), rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(adj.log_beta, central_difference(loss, g.log_beta), rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize("log_beta, expected", [(20.0, True), (np.log(0.01), False)])
def test_classify_static(log_beta, expected):
    assert bool(classify_static(single(log_beta=log_beta), 0.5)) is expected


def test_classify_static_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        classify_static(single(), 0.0)
