#!/usr/bin/env python3
"""
Populate a data directory with the synthetic benchmark captures.
This script creates:
- the six fastmover scenes (two movers each, flows from 2 to 40 px per frame)
- the smoke scene used by the quick checks

Each capture gets its training frames, holdout mid-frames, sweep points and
the ground-truth scene the synthetic oracle renders from.

Usage: python scripts/populate_benchmark.py [--out DATA_DIR] [--seed N]
"""

from pathlib import Path
import argparse
import os
import sys

# Add the backend directory to Python path
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'backend'))

from app.services import storage  # noqa: E402
from app.services.scene_synth import SceneSynthService, get_benchmark  # noqa: E402

BENCHMARKS = ["fastmover-6", "smoke"]


def populate(out: Path, seed: int) -> int:
    written = 0
    for name in BENCHMARKS:
        print(f"📦 {name}")
        for scene_spec, capture_spec in get_benchmark(name):
            gt_scene = SceneSynthService.make_scene(scene_spec, capture_spec.n_frames, seed=seed)
            capture = SceneSynthService.make_capture(gt_scene, capture_spec, name=scene_spec.name, seed=seed)
            coverage = SceneSynthService.check_frustum(gt_scene, capture)
            root = storage.save_capture(out / name / scene_spec.name, capture, gt_scene)
            visible = ", ".join(f"object {k}: {100 * v:.0f}%" for k, v in coverage.items()) or "static only"
            print(f"   ✅ {root} ({len(capture.frames)} frames, {len(capture.holdout)} holdout; {visible})")
            written += 1
    return written


def main():
    parser = argparse.ArgumentParser(description="Write the synthetic benchmark captures")
    parser.add_argument("--out", type=Path, default=Path("data"), help="data directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    written = populate(args.out, args.seed)
    print(f"\n🎉 Wrote {written} captures under {args.out}")


if __name__ == "__main__":
    main()
