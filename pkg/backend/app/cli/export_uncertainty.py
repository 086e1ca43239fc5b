from pathlib import Path
import argparse
import logging

from app.cli.common import load_config, output_dir
from app.cli.router import CommandRouter, arg
from app.services import storage

logger = logging.getLogger(__name__)

router = CommandRouter()

@router.command(
    "export-uncertainty",
    help="Write the learned per-pixel uncertainty maps of a checkpoint as PNG previews with raw .npy sidecars",
    arguments=[arg("--checkpoint", type=Path, required=True, help="trained checkpoint")],
)
def export_uncertainty(args: argparse.Namespace) -> int:
    config = load_config(args)
    ckpt = storage.load_checkpoint(args.checkpoint)
    if not ckpt.umaps:
        logger.warning(f"Checkpoint {args.checkpoint} holds no uncertainty maps")
        return 0
    target = output_dir(config) / "uncertainty"
    for frame_id in sorted(ckpt.umaps):
        png, _ = storage.save_uncertainty_map(target, ckpt.umaps[frame_id])
        print(png)
    return 0
