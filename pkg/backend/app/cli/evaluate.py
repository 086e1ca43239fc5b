from pathlib import Path
import argparse
import logging

import pandas as pd

from app.cli.common import capture_dirs, load_capture_with_gt, load_config, output_dir
from app.cli.router import CommandRouter, arg
from app.core.errors import ConfigError
from app.services import storage
from app.services.rasterizer import render_downsampled
from app.services.training import TrainingService

logger = logging.getLogger(__name__)

router = CommandRouter()

@router.command(
    "eval",
    help="PSNR, SSIM and the gradient-magnitude SSIM proxy (not LPIPS) on holdout mid-frames, plus depth previews",
    arguments=[
        arg("--capture", nargs="+", help="capture directory"),
        arg("--checkpoint", type=Path, help="trained checkpoint; defaults to the capture's ground-truth scene"),
        arg("--factor", type=int, default=1, help="evaluate at 1/factor resolution"),
    ],
)
def evaluate(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = output_dir(config)
    trained = storage.load_checkpoint(args.checkpoint).scene if args.checkpoint else None

    tables = []
    for directory in capture_dirs(args, config):
        capture, gt_scene = load_capture_with_gt(directory)
        scene = trained if trained is not None else gt_scene
        if scene is None:
            raise ConfigError("nothing to evaluate: pass --checkpoint or a capture with gt_scene.npz", path=str(directory))

        table = TrainingService.evaluate(scene, capture, args.factor)
        table.insert(0, "scene", capture.name)
        tables.append(table)

        for frame in capture.holdout:
            rendered = render_downsampled(scene, frame.camera, frame.timestamp, args.factor)
            storage.save_depth_preview(
                out / "depth" / capture.name / f"{frame.index:04d}.png", rendered.depth_map, rendered.alpha_map
            )

    metrics = pd.concat(tables, ignore_index=True)
    storage.write_csv(out / "eval.csv", metrics)
    summary = metrics.groupby("scene")[["psnr", "ssim", "gms_ssim_proxy"]].mean()
    print(summary.to_string(float_format="%.4f"))
    return 0
