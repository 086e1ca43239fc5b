import numpy as np
import pytest

from app.core.errors import MissingMeta
from app.models.domain import PseudoFrame
from app.models.schemas import OracleConfig, OraclePreset, WarpPatch
from app.oracles.adapters.synthetic import SyntheticOracle
from app.oracles.tasks import generate_pseudo_set
from app.services.pose_interp import interp_pose_at
from app.services.rasterizer import render_downsampled


def pseudo_for(oracle, capture, k=1, factor=1):
    return oracle.generate_pseudo((k, k + 1), capture.pose_pair(k), capture.frames[0].camera, factor=factor)


def test_clean_oracle_matches_holdout(smoke):
    scene, capture = smoke
    pseudo = pseudo_for(SyntheticOracle(scene, OracleConfig()), capture, k=1)
    np.testing.assert_array_equal(pseudo.image, capture.holdout[1].image)
    assert not pseudo.meta.error_mask.any()
    assert pseudo.meta.hidden_s == 0.5
    assert pseudo.bracket == (1, 2) and pseudo.frame_id == 1


def test_clean_oracle_at_reduced_resolution(smoke):
    scene, capture = smoke
    pair = capture.pose_pair(0)
    pseudo = pseudo_for(SyntheticOracle(scene, OracleConfig()), capture, k=0, factor=2)
    pose, t = interp_pose_at(pair, 0.5)
    expected = render_downsampled(scene, capture.frames[0].camera.with_pose(pose), t, 2).image
    assert pseudo.shape == (16, 16)
    np.testing.assert_array_equal(pseudo.image, expected)


def test_biased_oracle_renders_at_hidden_s(smoke):
    scene, capture = smoke
    pair = capture.pose_pair(1)
    oracle = SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.biased))
    pseudo = pseudo_for(oracle, capture, k=1)
    pose, t = interp_pose_at(pair, 0.3)
    np.testing.assert_array_equal(pseudo.image, render_downsampled(scene, capture.frames[0].camera.with_pose(pose), t, 1).image)
    assert not np.array_equal(pseudo.image, capture.holdout[1].image)


def test_warp_patch_mask_is_its_region(smoke):
    scene, capture = smoke
    patch = WarpPatch(x0=0.25, y0=0.25, x1=0.5, y1=0.75, dx=2.0, dy=0.0)
    oracle = SyntheticOracle(scene, OracleConfig(warp_patches=[patch]))
    pseudo = pseudo_for(oracle, capture, k=1)

    expected = np.zeros((32, 32), dtype=bool)
    expected[8:24, 8:16] = True
    np.testing.assert_array_equal(oracle.oracle_error_mask(pseudo), expected)
    clean = capture.holdout[1].image
    np.testing.assert_array_equal(pseudo.image[~expected], clean[~expected])


def test_patch_masks_union(smoke):
    scene, capture = smoke
    patches = [
        WarpPatch(x0=0.0, y0=0.0, x1=0.25, y1=0.25, dx=1.0),
        WarpPatch(x0=0.75, y0=0.5, x1=1.0, y1=1.0, dy=-1.0),
    ]
    pseudo = pseudo_for(SyntheticOracle(scene, OracleConfig(warp_patches=patches)), capture)
    expected = np.zeros((32, 32), dtype=bool)
    expected[0:8, 0:8] = True
    expected[16:32, 24:32] = True
    np.testing.assert_array_equal(pseudo.meta.error_mask, expected)


def test_mover_corruption_is_masked(smoke):
    scene, capture = smoke
    oracle = SyntheticOracle(scene, OracleConfig(mover_warp_px=3.0, mover_blur_sigma=1.0))
    pseudo = pseudo_for(oracle, capture, k=1)
    mask = pseudo.meta.error_mask
    assert mask.any() and not mask.all()
    clean = capture.holdout[1].image
    np.testing.assert_array_equal(pseudo.image[~mask], clean[~mask])


def test_error_mask_requires_meta(smoke):
    scene, _ = smoke
    oracle = SyntheticOracle(scene, OracleConfig())
    with pytest.raises(MissingMeta):
        oracle.oracle_error_mask(PseudoFrame(image=np.zeros((2, 2, 3)), bracket=(0, 1), frame_id=0))


def test_noise_is_independent_of_call_order(smoke):
    scene, capture = smoke
    config = OracleConfig(color_noise_sigma=0.05, pose_jitter_rot=0.005)
    forward = SyntheticOracle(scene, config, seed=7)
    backward = SyntheticOracle(scene, config, seed=7)
    a0, a1 = pseudo_for(forward, capture, k=0), pseudo_for(forward, capture, k=1)
    b1, b0 = pseudo_for(backward, capture, k=1), pseudo_for(backward, capture, k=0)
    np.testing.assert_array_equal(a0.image, b0.image)
    np.testing.assert_array_equal(a1.image, b1.image)

    other = pseudo_for(SyntheticOracle(scene, config, seed=8), capture, k=0)
    assert not np.array_equal(other.image, a0.image)


def test_noisy_output_stays_in_range(smoke):
    scene, capture = smoke
    pseudo = pseudo_for(SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.unadapted)), capture)
    assert pseudo.image.min() >= 0.0 and pseudo.image.max() <= 1.0


def test_pseudo_set_covers_every_pair_and_caches(smoke, tmp_path):
    scene, capture = smoke
    config = OracleConfig(color_noise_sigma=0.02)
    first = SyntheticOracle(scene, config)
    frames = generate_pseudo_set(first, capture, 2, tmp_path)
    assert [p.frame_id for p in frames] == [0, 1, 2]
    assert [p.bracket for p in frames] == [(0, 1), (1, 2), (2, 3)]
    assert first.generated == 3

    second = SyntheticOracle(scene, config)
    cached = generate_pseudo_set(second, capture, 2, tmp_path)
    assert second.generated == 0
    for a, b in zip(frames, cached):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.meta.error_mask, b.meta.error_mask)


def test_cache_is_regenerated_for_another_oracle(smoke, tmp_path):
    scene, capture = smoke
    generate_pseudo_set(SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.clean)), capture, 2, tmp_path)

    biased = SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.biased))
    frames = generate_pseudo_set(biased, capture, 2, tmp_path)
    assert biased.generated == 3
    assert all(p.meta.hidden_s == 0.3 for p in frames)
    expected = pseudo_for(SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.biased)), capture, k=1, factor=2)
    np.testing.assert_array_equal(frames[1].image, expected.image)

    # the overwritten cache now serves the biased frames
    again = SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.biased))
    assert all(p.meta.hidden_s == 0.3 for p in generate_pseudo_set(again, capture, 2, tmp_path))
    assert again.generated == 0


def test_cache_is_regenerated_for_another_seed(smoke, tmp_path):
    scene, capture = smoke
    config = OracleConfig(color_noise_sigma=0.02)
    first = generate_pseudo_set(SyntheticOracle(scene, config, seed=0), capture, 2, tmp_path)
    reseeded = SyntheticOracle(scene, config, seed=1)
    second = generate_pseudo_set(reseeded, capture, 2, tmp_path)
    assert reseeded.generated == 3
    assert not np.array_equal(first[0].image, second[0].image)

def test_oracle_stats(smoke):
    scene, capture = smoke
    oracle = SyntheticOracle(scene, OracleConfig.from_preset(OraclePreset.biased))
    pseudo_for(oracle, capture)
    stats = oracle.get_oracle_stats()
    assert stats["preset"] == "biased" and stats["hidden_s"] == 0.3 and stats["generated"] == 1
