from pathlib import Path
import argparse
import logging

import pandas as pd

from app.cli.common import build_oracle, capture_dirs, load_capture_with_gt, load_config, output_dir, train_arguments
from app.cli.router import CommandRouter, arg
from app.models.domain import Capture, SceneModel
from app.models.schemas import AblationArm, ExperimentConfig, OracleConfig, OraclePreset
from app.oracles.adapters.synthetic import SyntheticOracle
from app.services import storage
from app.services.analytics import AnalyticsService
from app.services.training import TrainingService

logger = logging.getLogger(__name__)

router = CommandRouter()

COMPARED_PRESETS = (OraclePreset.unadapted, OraclePreset.streetlike)


def oracle_comparison(capture: Capture, gt_scene: SceneModel, config: ExperimentConfig, out_dir: Path) -> pd.DataFrame:
    """+JTO+UD under the unadapted and the adapted oracle, one row per preset"""
    tables = []
    for preset in COMPARED_PRESETS:
        oracle = SyntheticOracle(gt_scene, OracleConfig.from_preset(preset), seed=config.seed)
        table = TrainingService.ablate(
            capture, config.train, oracle, arms=[AblationArm.jto_ud], seed=config.seed, out_dir=out_dir / preset.value
        )
        tables.append(table.assign(oracle=preset.value))
    return pd.concat(tables, ignore_index=True)


@router.command(
    "ablate",
    help="Train every ablation arm on identical data and seeds and tabulate holdout metrics",
    arguments=[
        arg("--capture", nargs="+", help="capture directories"),
        arg("--arms", help="comma-separated arms, e.g. 'baseline,+pseudo,+JTO,+JTO+UD'"),
        arg(
            "--compare-unadapted",
            action="store_true",
            help="also train +JTO+UD under the unadapted and the streetlike oracle presets",
        ),
        *train_arguments(),
    ],
)
def ablate(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = output_dir(config)

    tables = []
    comparisons = []
    for directory in capture_dirs(args, config):
        capture, gt_scene = load_capture_with_gt(directory)
        tables.append(
            TrainingService.ablate(
                capture,
                config.train,
                build_oracle(gt_scene, config),
                arms=config.arms,
                seed=config.seed,
                out_dir=out / "ablation" / capture.name,
            )
        )
        if args.compare_unadapted:
            if gt_scene is None:
                logger.warning(f"No ground-truth scene for '{capture.name}'; skipping the oracle comparison")
            else:
                comparisons.append(oracle_comparison(capture, gt_scene, config, out / "oracle_comparison" / capture.name))

    table = pd.concat(tables, ignore_index=True)
    summary = AnalyticsService.summarize_ablation(table)
    storage.write_csv(out / "ablation.csv", table)
    storage.write_csv(out / "ablation_summary.csv", summary)
    if not AnalyticsService.ablation_ordering_holds(summary):
        logger.warning("Mean PSNR is not monotone across the arms in the order given")
    print(summary.to_string(index=False, float_format="%.4f"))

    if comparisons:
        comparison = pd.concat(comparisons, ignore_index=True)
        storage.write_csv(out / "oracle_comparison.csv", comparison)
        psnr = comparison.groupby("oracle")["psnr"].mean()
        logger.info(
            f"Adapted oracle gains {psnr[OraclePreset.streetlike.value] - psnr[OraclePreset.unadapted.value]:.2f} dB "
            f"PSNR over the unadapted one"
        )
        print(comparison.to_string(index=False, float_format="%.4f"))
    return 0
