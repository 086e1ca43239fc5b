from pathlib import Path
import argparse
import logging

from app.cli.common import build_oracle, capture_dirs, load_capture_with_gt, load_config, output_dir, train_arguments
from app.cli.router import CommandRouter, arg
from app.services import storage
from app.services.training import TrainingService

logger = logging.getLogger(__name__)

router = CommandRouter()

@router.command(
    "train",
    help="Train a 4D scene on a capture, distilling pseudo-frames from the synthetic oracle",
    arguments=[
        arg("--capture", nargs="+", help="capture directory (one run per directory)"),
        arg("--resume", type=Path, help="checkpoint to resume from (.npz or .json)"),
        *train_arguments(),
    ],
)
def train(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = output_dir(config)
    dirs = capture_dirs(args, config)
    if args.resume and len(dirs) > 1:
        logger.warning("--resume applies to the first capture only")

    for k, directory in enumerate(dirs):
        capture, gt_scene = load_capture_with_gt(directory)
        run_dir = out / capture.name
        storage.save_experiment_config(run_dir / "config.json", config)
        result = TrainingService.train(
            capture,
            config.train,
            build_oracle(gt_scene, config),
            seed=config.seed,
            out_dir=run_dir,
            resume_from=args.resume if k == 0 else None,
        )
        final = result.log["psnr_holdout"].dropna()
        if not final.empty:
            logger.info(f"'{capture.name}': final holdout PSNR {final.iloc[-1]:.2f} dB")
        print(result.checkpoint)
    return 0
