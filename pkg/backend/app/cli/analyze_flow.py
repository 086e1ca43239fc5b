from pathlib import Path
import argparse
import logging

import pandas as pd

from app.cli.common import capture_dirs, load_capture_with_gt, load_config, output_dir, train_arguments
from app.cli.router import CommandRouter, arg
from app.core.errors import ConfigError
from app.models.schemas import AblationArm
from app.services import plots, storage
from app.services.analytics import AnalyticsService
from app.services.training import TrainingService

logger = logging.getLogger(__name__)

router = CommandRouter()

def _checkpoints(paths, n_captures: int, flag: str):
    if paths is None:
        return [None] * n_captures
    if len(paths) != n_captures:
        raise ConfigError(f"{len(paths)} checkpoints for {n_captures} captures", path="<command line>", location=flag)
    return paths

def _flow_table(directory: Path, checkpoint, config, run_dir: Path) -> pd.DataFrame:
    capture, gt_scene = load_capture_with_gt(directory)
    if gt_scene is None:
        raise ConfigError("flow analysis needs the ground-truth scene", path=str(directory / "gt_scene.npz"))
    if checkpoint is not None:
        trained = storage.load_checkpoint(checkpoint).scene
    else:
        # reconstruction-only run: no pseudo-frames, no timestamp or uncertainty learning
        baseline = config.train.for_arm(AblationArm.baseline)
        trained = TrainingService.train(capture, baseline, None, seed=config.seed, out_dir=run_dir / capture.name).scene
    return AnalyticsService.flow_error_table(gt_scene, capture, trained)

@router.command(
    "analyze-flow",
    help="Per-object analytic flow against holdout mid-frame error, with Pearson r and a scatter plot",
    arguments=[
        arg("--capture", nargs="+", help="capture directories"),
        arg("--checkpoint", nargs="+", type=Path, help="one trained checkpoint per capture; a baseline run is trained when omitted"),
        arg("--method-checkpoint", nargs="+", type=Path, help="checkpoints of a second method, for the top-quartile error drop"),
        *train_arguments(),
    ],
)
def analyze_flow(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = output_dir(config)
    dirs = capture_dirs(args, config)

    baseline_ckpts = _checkpoints(args.checkpoint, len(dirs), "--checkpoint")
    table = pd.concat(
        [_flow_table(d, c, config, out / "flow_baseline") for d, c in zip(dirs, baseline_ckpts)], ignore_index=True
    )
    r, p = AnalyticsService.flow_error_correlation(table)
    storage.write_csv(out / "flow_error.csv", table)
    plots.flow_error_scatter(table, out / "flow_error.png", r)
    print(f"pearson_r={r:.4f} p={p:.3g} objects={len(table)}")

    if args.method_checkpoint:
        method_ckpts = _checkpoints(args.method_checkpoint, len(dirs), "--method-checkpoint")
        method = pd.concat([_flow_table(d, c, config, out) for d, c in zip(dirs, method_ckpts)], ignore_index=True)
        storage.write_csv(out / "flow_error_method.csv", method)
        reduction = AnalyticsService.top_quartile_error_reduction(table, method)
        print(f"top_quartile_error_reduction={reduction:.4f}")
    return 0
