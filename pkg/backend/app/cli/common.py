"""Flags shared by every subcommand and the config/override plumbing behind them"""

from pathlib import Path
from typing import List, Optional, Tuple
import argparse
import logging

from pydantic import ValidationError

from app.cli.router import arg
from app.core.config import settings
from app.core.errors import ConfigError, SpecInvalid
from app.models.domain import Capture, SceneModel
from app.models.schemas import (
    AblationArm,
    CaptureSpec,
    ExperimentConfig,
    OracleConfig,
    OraclePreset,
    ResolutionStage,
    SynthSceneSpec,
    TrainConfig,
    default_schedule,
)
from app.oracles.adapters.synthetic import SyntheticOracle
from app.services import storage
from app.services.scene_synth import get_benchmark

logger = logging.getLogger(__name__)

FLAGS = "<command line>"


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", type=Path, help="output directory (overrides the config)")


def train_arguments():
    return [
        arg("--iters", type=int, help="total training iterations"),
        arg(
            "--resolution-schedule",
            help="factors split evenly over the run ('16,8,4,2') or explicit factor:until pairs ('16:500,8:1000')",
        ),
        arg("--distill-period", type=int, help="distill every N iterations"),
        arg("--oracle-preset", choices=[p.value for p in OraclePreset], help="pseudo-frame oracle preset"),
    ]


def parse_schedule(text: str, total_iters: int) -> List[ResolutionStage]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty resolution schedule", path=FLAGS, location="--resolution-schedule")
    try:
        if all(":" not in p for p in parts):
            return default_schedule(total_iters, tuple(int(p) for p in parts))
        stages = []
        for p in parts:
            factor, until = p.split(":")
            stages.append(ResolutionStage(factor=int(factor), until_iter=int(until)))
        return stages
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"bad resolution schedule '{text}': {e}", path=FLAGS, location="--resolution-schedule") from e


def parse_arms(text: str) -> List[AblationArm]:
    arms = []
    for item in (p.strip() for p in text.split(",")):
        if not item:
            continue
        if item in AblationArm.__members__:
            arms.append(AblationArm[item])
            continue
        try:
            arms.append(AblationArm(item))
        except ValueError:
            valid = ", ".join(a.value for a in AblationArm)
            raise ConfigError(f"unknown arm '{item}' (valid: {valid})", path=FLAGS, location="--arms")
    if not arms:
        raise ConfigError("no ablation arms given", path=FLAGS, location="--arms")
    return arms


def _override_train(train: TrainConfig, args: argparse.Namespace) -> TrainConfig:
    data = train.model_dump()
    iters = getattr(args, "iters", None)
    schedule = getattr(args, "resolution_schedule", None)
    period = getattr(args, "distill_period", None)
    if iters is not None:
        data["total_iters"] = iters
        if schedule is None:
            factors = tuple(stage.factor for stage in train.resolution_schedule)
            data["resolution_schedule"] = default_schedule(iters, factors) if factors else []
    if schedule is not None:
        data["resolution_schedule"] = parse_schedule(schedule, data["total_iters"])
    if period is not None:
        data["distill_period"] = period
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(first["msg"], path=FLAGS, location=location) from e


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults) with the command-line overrides applied"""
    config = storage.load_experiment_config(args.config) if args.config else ExperimentConfig()
    update = {"train": _override_train(config.train, args)}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.out is not None:
        update["output_dir"] = str(args.out)
    elif not args.config:
        update["output_dir"] = settings.OUTPUT_DIR
    preset = getattr(args, "oracle_preset", None)
    if preset is not None:
        update["oracle"] = OracleConfig.from_preset(preset)
    arms = getattr(args, "arms", None)
    if arms is not None:
        update["arms"] = parse_arms(arms)
    return config.model_copy(update=update)


def output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def scene_specs(config: ExperimentConfig, benchmark: Optional[str] = None) -> List[Tuple[SynthSceneSpec, CaptureSpec]]:
    name = benchmark or config.benchmark
    if name:
        return get_benchmark(name)
    if config.scene is not None:
        return [(config.scene, config.capture)]
    raise SpecInvalid("no scene to synthesize: pass --benchmark or a config with 'scene' or 'benchmark'")


def capture_dirs(args: argparse.Namespace, config: ExperimentConfig) -> List[Path]:
    dirs = getattr(args, "capture", None)
    if dirs:
        return [Path(d) for d in dirs]
    if config.capture_path:
        return [Path(config.capture_path)]
    raise ConfigError("no capture given (use --capture or 'capture_path' in the config)", path=FLAGS)


def load_capture_with_gt(directory: Path) -> Tuple[Capture, Optional[SceneModel]]:
    capture = storage.load_capture(directory)
    if not (directory / "gt_scene.npz").exists():
        return capture, None
    return capture, storage.load_gt_scene(directory)


def build_oracle(gt_scene: Optional[SceneModel], config: ExperimentConfig) -> Optional[SyntheticOracle]:
    if gt_scene is None:
        logger.warning("No ground-truth scene next to the capture; training without pseudo-frames")
        return None
    return SyntheticOracle(gt_scene, config.oracle, seed=config.seed)
