import json

import pytest

from app.main import main
from app.services import storage


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Smoke capture plus a short training run shared by the read-only commands"""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--benchmark", "smoke", "--out", str(root / "data")]) == 0
    capture = root / "data" / "smoke"
    code = main(["train", "--capture", str(capture), "--out", str(root / "run"), "--iters", "8", "--distill-period", "2"])
    assert code == 0
    return {"root": root, "capture": capture, "run": root / "run" / "smoke"}


def test_synth_writes_capture(workspace):
    capture = workspace["capture"]
    assert (capture / "capture.json").exists()
    assert (capture / "gt_scene.npz").exists()
    assert len(list((capture / "frames").glob("*.png"))) == 4
    assert len(list((capture / "holdout").glob("*.png"))) == 3


def test_train_writes_checkpoint_and_log(workspace):
    run = workspace["run"]
    assert (run / "ckpt_000008.npz").exists() and (run / "ckpt_000008.json").exists()
    log = storage.read_csv(run / "train_log.csv")
    assert list(log["iter"]) == list(range(8))
    saved = json.loads((run / "config.json").read_text())
    assert saved["train"]["total_iters"] == 8 and saved["train"]["distill_period"] == 2


def test_train_prints_checkpoint(workspace, tmp_path, capsys):
    code = main(["train", "--capture", str(workspace["capture"]), "--out", str(tmp_path), "--iters", "2"])
    assert code == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == str(tmp_path / "smoke" / "ckpt_000002.npz")


def test_eval_checkpoint(workspace, tmp_path, capsys):
    code = main(
        ["eval", "--capture", str(workspace["capture"]), "--checkpoint", str(workspace["run"] / "ckpt_000008"), "--out", str(tmp_path)]
    )
    assert code == 0
    table = storage.read_csv(tmp_path / "eval.csv")
    assert list(table.columns) == ["scene", "frame", "timestamp", "psnr", "ssim", "gms_ssim_proxy"]
    assert len(table) == 3
    assert len(list((tmp_path / "depth" / "smoke").glob("*.png"))) == 3
    assert "smoke" in capsys.readouterr().out


def test_eval_ground_truth_is_perfect(workspace, tmp_path):
    assert main(["eval", "--capture", str(workspace["capture"]), "--out", str(tmp_path)]) == 0
    assert (storage.read_csv(tmp_path / "eval.csv")["psnr"] == 99.0).all()


def test_export_uncertainty(workspace, tmp_path, capsys):
    code = main(["export-uncertainty", "--checkpoint", str(workspace["run"] / "ckpt_000008.npz"), "--out", str(tmp_path)])
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "uncertainty").glob("*.png")) == [
        "uncertainty_0000.png",
        "uncertainty_0001.png",
        "uncertainty_0002.png",
    ]
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


def test_plot_timestamps(workspace, tmp_path):
    code = main(["plot-timestamps", "--log", str(workspace["run"] / "train_log.csv"), "--slerp-deviation", "--out", str(tmp_path)])
    assert code == 0
    for name in ("timestamps.csv", "timestamps.png", "slerp_deviation.csv", "slerp_deviation.png"):
        assert (tmp_path / name).exists()
    assert set(storage.read_csv(tmp_path / "timestamps.csv")["frame_id"]) == {0, 1, 2}


def test_ablate(workspace, tmp_path, capsys):
    code = main(
        ["ablate", "--capture", str(workspace["capture"]), "--arms", "baseline,+JTO", "--iters", "4", "--out", str(tmp_path)]
    )
    assert code == 0
    table = storage.read_csv(tmp_path / "ablation.csv")
    assert list(table["arm"]) == ["baseline", "+JTO"]
    assert (tmp_path / "ablation_summary.csv").exists()
    assert "+JTO" in capsys.readouterr().out


def test_ablate_compares_oracle_presets(workspace, tmp_path):
    code = main(
        [
            "ablate", "--capture", str(workspace["capture"]), "--arms", "baseline", "--iters", "4",
            "--compare-unadapted", "--out", str(tmp_path),
        ]
    )
    assert code == 0
    comparison = storage.read_csv(tmp_path / "oracle_comparison.csv")
    assert list(comparison["oracle"]) == ["unadapted", "streetlike"]
    assert list(comparison["arm"]) == ["+JTO+UD", "+JTO+UD"]
    assert (tmp_path / "oracle_comparison" / "smoke" / "unadapted" / "jto_ud" / "ckpt_000004.npz").exists()
    assert list(storage.read_csv(tmp_path / "ablation.csv")["arm"]) == ["baseline"]


def test_analyze_flow_with_checkpoint(workspace, tmp_path, capsys):
    code = main(
        ["analyze-flow", "--capture", str(workspace["capture"]), "--checkpoint", str(workspace["run"] / "ckpt_000008"), "--out", str(tmp_path)]
    )
    assert code == 0
    table = storage.read_csv(tmp_path / "flow_error.csv")
    assert list(table["object_id"]) == [0]
    # a single object gives no correlation
    assert "pearson_r=nan" in capsys.readouterr().out


def test_analyze_flow_checkpoint_count(workspace, tmp_path, capsys):
    ckpt = str(workspace["run"] / "ckpt_000008")
    code = main(["analyze-flow", "--capture", str(workspace["capture"]), "--checkpoint", ckpt, ckpt, "--out", str(tmp_path)])
    assert code == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_bad_config_exits_with_location(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text('{\n  "seed": -1\n}\n')
    assert main(["synth", "--benchmark", "smoke", "--config", str(config)]) == 2
    err = capsys.readouterr().err
    assert "error: " in err
    assert f"{config}:seed:" in err


def test_bad_arm(workspace, tmp_path, capsys):
    code = main(["ablate", "--capture", str(workspace["capture"]), "--arms", "baseline,+magic", "--out", str(tmp_path)])
    assert code == 2
    assert "+magic" in capsys.readouterr().err


def test_bad_schedule(workspace, tmp_path, capsys):
    code = main(
        ["train", "--capture", str(workspace["capture"]), "--resolution-schedule", "3,1", "--iters", "4", "--out", str(tmp_path)]
    )
    assert code == 2
    assert "--resolution-schedule" in capsys.readouterr().err


def test_missing_capture(tmp_path, capsys):
    assert main(["train", "--capture", str(tmp_path / "absent"), "--out", str(tmp_path)]) == 2
    assert "capture metadata not found" in capsys.readouterr().err


def test_checkpoint_error_exit_code(workspace, tmp_path, capsys):
    assert main(["export-uncertainty", "--checkpoint", str(tmp_path / "none.npz"), "--out", str(tmp_path)]) == 5
    assert "error: " in capsys.readouterr().err


def test_synth_without_scene(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)]) == 2
    assert "no scene to synthesize" in capsys.readouterr().err


def test_unknown_benchmark_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--benchmark", "nope", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_router_rejects_duplicate_subcommands():
    from app.cli.router import CommandRouter

    first, second = CommandRouter(), CommandRouter()
    for router in (first, second):
        router.command("same", help="")(lambda args: 0)
    first_copy = CommandRouter()
    first_copy.include_router(first)
    with pytest.raises(ValueError):
        first_copy.include_router(second)
