import json

import numpy as np
import pandas as pd
import pytest

from app.core.errors import CheckpointError, ConfigError
from app.models.domain import GAUSSIAN_FIELDS, UncertaintyMap
from app.models.schemas import ExperimentConfig, TrainConfig
from app.services import storage
from app.services.optim import AdamState, adam_step
from conftest import random_scene


def test_capture_round_trip(smoke, tmp_path):
    scene, capture = smoke
    root = storage.save_capture(tmp_path / "smoke", capture, scene)
    loaded = storage.load_capture(root)

    assert loaded.name == capture.name
    assert len(loaded.frames) == len(capture.frames) and len(loaded.holdout) == len(capture.holdout)
    assert loaded.holdout_brackets == capture.holdout_brackets
    np.testing.assert_array_equal(loaded.timestamps, capture.timestamps)
    for a, b in zip(loaded.frames, capture.frames):
        # 8-bit PNG quantization
        np.testing.assert_allclose(a.image, b.image, atol=0.5 / 255 + 1e-12)
        np.testing.assert_allclose(a.camera.pose.rotation, b.camera.pose.rotation, rtol=1e-15)
        np.testing.assert_allclose(a.camera.pose.translation, b.camera.pose.translation, rtol=1e-15)
        assert (a.camera.fx, a.camera.width) == (b.camera.fx, b.camera.width)
    np.testing.assert_allclose(loaded.points, capture.points, rtol=1e-8, atol=1e-12)

    gt = storage.load_gt_scene(root)
    for name in GAUSSIAN_FIELDS:
        np.testing.assert_array_equal(getattr(gt.gaussians, name), getattr(scene.gaussians, name))
    np.testing.assert_array_equal(gt.labels, scene.labels)

    record = json.loads((root / "capture.json").read_text())
    assert record["object_ids"] == [0]


def test_missing_capture(tmp_path):
    with pytest.raises(ConfigError) as info:
        storage.load_capture(tmp_path)
    assert "capture.json" in info.value.detail


def test_capture_without_gt_scene(smoke, tmp_path):
    _, capture = smoke
    root = storage.save_capture(tmp_path / "nogt", capture)
    with pytest.raises(ConfigError):
        storage.load_gt_scene(root)


def checkpoint_state(rng):
    scene = random_scene(rng, 5)
    adam = AdamState()
    params = scene.gaussians.params()
    adam_step(adam, params, {name: rng.normal(size=params[name].shape) for name in GAUSSIAN_FIELDS}, 0.01)
    umaps = {0: UncertaintyMap(values=rng.normal(size=(4, 4)), frame_id=0), 2: UncertaintyMap.constant(2, (4, 4), 0.5)}
    return scene, adam, umaps


def test_checkpoint_round_trip(rng, tmp_path):
    scene, adam, umaps = checkpoint_state(rng)
    delta_t = np.array([0.1, -0.4, 0.0])
    config = TrainConfig(total_iters=50)
    path = storage.save_checkpoint(tmp_path / "ckpt_000010", 10, scene, delta_t, umaps, 4, adam, config)
    assert path == tmp_path / "ckpt_000010.npz"

    ckpt = storage.load_checkpoint(tmp_path / "ckpt_000010")
    assert ckpt.iteration == 10 and ckpt.umap_factor == 4
    assert ckpt.config == config
    np.testing.assert_array_equal(ckpt.delta_t, delta_t)
    for name in GAUSSIAN_FIELDS:
        np.testing.assert_array_equal(getattr(ckpt.scene.gaussians, name), getattr(scene.gaussians, name))
    np.testing.assert_array_equal(ckpt.scene.background, scene.background)
    assert sorted(ckpt.umaps) == [0, 2]
    np.testing.assert_array_equal(ckpt.umaps[0].values, umaps[0].values)
    assert ckpt.adam.steps == adam.steps
    np.testing.assert_array_equal(ckpt.adam.v["mu"], adam.v["mu"])


def test_checkpoint_version_mismatch(rng, tmp_path):
    scene, adam, umaps = checkpoint_state(rng)
    storage.save_checkpoint(tmp_path / "ckpt", 1, scene, np.zeros(2), umaps, 1, adam, TrainConfig())
    meta = json.loads((tmp_path / "ckpt.json").read_text())
    meta["version"] = 99
    (tmp_path / "ckpt.json").write_text(json.dumps(meta))
    with pytest.raises(CheckpointError) as info:
        storage.load_checkpoint(tmp_path / "ckpt.npz")
    assert "version 99" in info.value.detail


def test_incomplete_checkpoint(rng, tmp_path):
    scene, adam, umaps = checkpoint_state(rng)
    storage.save_checkpoint(tmp_path / "ckpt", 1, scene, np.zeros(2), umaps, 1, adam, TrainConfig())
    (tmp_path / "ckpt.npz").unlink()
    with pytest.raises(CheckpointError):
        storage.load_checkpoint(tmp_path / "ckpt")


def test_config_syntax_error_has_line_and_column(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed" 1\n}\n')
    with pytest.raises(ConfigError) as info:
        storage.load_experiment_config(path)
    assert info.value.location == "2:10"
    assert info.value.detail.startswith(f"{path}:2:10: ")
    assert info.value.exit_code == 2


def test_config_validation_error_names_the_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"distill_period": 0}}))
    with pytest.raises(ConfigError) as info:
        storage.load_experiment_config(path)
    assert info.value.location == "train.distill_period"


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"seeed": 3}))
    with pytest.raises(ConfigError):
        storage.load_experiment_config(path)


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        storage.load_experiment_config(tmp_path / "absent.json")


def test_config_round_trip(tmp_path):
    config = ExperimentConfig(name="run", seed=3, benchmark="smoke", train=TrainConfig(total_iters=40))
    storage.save_experiment_config(tmp_path / "config.json", config)
    assert storage.load_experiment_config(tmp_path / "config.json") == config


def test_csv_floats_are_exact(rng, tmp_path):
    frame = pd.DataFrame({"iter": np.arange(5), "loss": rng.normal(size=5) * 1e-3, "psnr": [np.nan, 1 / 3, 2.0, 1e-17, 3.5]})
    storage.write_csv(tmp_path / "log.csv", frame)
    pd.testing.assert_frame_equal(storage.read_csv(tmp_path / "log.csv"), frame)


def test_csv_append_keeps_one_header(tmp_path):
    storage.write_csv(tmp_path / "t.csv", pd.DataFrame({"a": [1]}))
    storage.write_csv(tmp_path / "t.csv", pd.DataFrame({"a": [2]}), append=True)
    assert list(storage.read_csv(tmp_path / "t.csv")["a"]) == [1, 2]


def test_uncertainty_export(tmp_path):
    beta = np.array([[0.0, 0.5], [1.0, 2.0]])
    umap = UncertaintyMap(values=np.log(np.expm1(np.maximum(beta, 1e-12))), frame_id=3)
    png, raw = storage.save_uncertainty_map(tmp_path, umap)
    assert png.name == "uncertainty_0003.png"
    np.testing.assert_allclose(np.load(raw), umap.exposed())
    preview = storage.load_png(png)[..., 0]
    assert preview[1, 1] == 1.0 and preview[0, 0] == 0.0


def test_depth_preview(tmp_path):
    depth = np.array([[2.0, 4.0], [0.0, 3.0]])
    alpha = np.array([[1.0, 1.0], [0.0, 1.0]])
    preview = storage.load_png(storage.save_depth_preview(tmp_path / "d.png", depth, alpha))[..., 0]
    assert preview[1, 0] == 0.0
    assert preview[0, 0] > preview[1, 1] > preview[0, 1] > 0.0


def test_missing_pseudo_cache_entry(tmp_path):
    assert storage.load_pseudo(tmp_path, 0, 2) is None
