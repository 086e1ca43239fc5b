import argparse
import logging

from app.cli.common import load_config, output_dir, scene_specs
from app.cli.router import CommandRouter, arg
from app.services import storage
from app.services.scene_synth import BENCHMARKS, SceneSynthService

logger = logging.getLogger(__name__)

router = CommandRouter()

@router.command(
    "synth",
    help="Render synthetic captures: training frames, holdout mid-frames, sweep points and the ground-truth scene",
    arguments=[arg("--benchmark", choices=sorted(BENCHMARKS), help="benchmark registry name")],
)
def synth(args: argparse.Namespace) -> int:
    """One capture directory per scene under the output directory"""
    config = load_config(args)
    out = output_dir(config)
    for scene_spec, capture_spec in scene_specs(config, args.benchmark):
        gt_scene = SceneSynthService.make_scene(scene_spec, capture_spec.n_frames, seed=config.seed)
        capture = SceneSynthService.make_capture(gt_scene, capture_spec, name=scene_spec.name, seed=config.seed)
        path = storage.save_capture(out / scene_spec.name, capture, gt_scene)
        print(path)
    return 0
