from pathlib import Path
import argparse
import logging

from app.cli.common import load_config, output_dir
from app.cli.router import CommandRouter, arg
from app.core.errors import ConfigError
from app.services import plots, storage
from app.services.analytics import AnalyticsService
from app.services.pose_interp import slerp_deviation_curve

logger = logging.getLogger(__name__)

router = CommandRouter()

@router.command(
    "plot-timestamps",
    help="Plot sigmoid(delta_t) per pseudo-frame over training from a training log",
    arguments=[
        arg("--log", type=Path, required=True, help="train_log.csv of a run"),
        arg("--slerp-deviation", action="store_true", help="also plot lerp vs slerp deviation over rotation angle"),
    ],
)
def plot_timestamps(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = output_dir(config)
    if not args.log.exists():
        raise ConfigError("training log not found", path=str(args.log))

    trajectories = AnalyticsService.delta_t_trajectories(storage.read_csv(args.log))
    if trajectories.empty:
        raise ConfigError("training log has no sigmoid(delta_t) columns", path=str(args.log))
    storage.write_csv(out / "timestamps.csv", trajectories)
    print(plots.delta_t_curves(trajectories, out / "timestamps.png", hidden_s=config.oracle.hidden_s))

    if args.slerp_deviation:
        curve = slerp_deviation_curve()
        storage.write_csv(out / "slerp_deviation.csv", curve)
        print(plots.slerp_deviation_plot(curve, out / "slerp_deviation.png"))
    return 0
