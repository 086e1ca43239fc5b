#!/usr/bin/env python3
"""
Benchmark-scale acceptance checks for the 4D Gaussian engine.

Runs on the synthetic fastmover benchmark and reports PASS/FAIL for:
- analytic gradients against central differences at full scale
- timestamp bias recovery from several initializations, and under joint training
- ablation ordering and PSNR gaps across the four arms
- uncertainty localization on oracle-corrupted mover pixels
- static classification of Gaussians on the static background
- flow/error correlation of the baseline and the top-quartile error drop
- bit-identical logs across two runs and across checkpoint resume

The per-module property suite lives in backend/tests; this script covers
what needs full training runs or full-size scenes and takes one to two hours.

Usage: python scripts/run_acceptance.py [--iters N] [--scenes N] [--out DIR]
"""

from pathlib import Path
from typing import Dict, List
import argparse
import logging
import os
import sys
import time

# Add the backend directory and its test helpers to Python path
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'backend'))
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'backend', 'tests'))

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.core.config import settings  # noqa: E402
from app.models.domain import GAUSSIAN_FIELDS, Pose, PosePair, TimestampParam, UncertaintyMap  # noqa: E402
from app.models.schemas import AblationArm, OracleConfig, OraclePreset, ResolutionStage, TrainConfig  # noqa: E402
from app.oracles.adapters.synthetic import SyntheticOracle  # noqa: E402
from app.services.analytics import AnalyticsService  # noqa: E402
from app.services.distill import distill_step  # noqa: E402
from app.services.geometry import quat_from_axis_angle  # noqa: E402
from app.services.optim import AdamState, adam_step  # noqa: E402
from app.services.pose_interp import dloss_d_delta_t, interp_pose, interp_pose_at  # noqa: E402
from app.services.pvg import sigmoid  # noqa: E402
from app.services.rasterizer import render, render_backward  # noqa: E402
from app.services.scene_synth import SceneSynthService, get_benchmark  # noqa: E402
from app.services.training import TrainingService  # noqa: E402
from conftest import central_difference, make_camera, random_scene  # noqa: E402

DELTA_T_INITS = [-2.0, -1.0, 0.0, 1.0, 2.0]
GRADIENT_SEEDS = 20
MAX_GAUSSIANS = 50


class AcceptanceRunner:
    def __init__(self, iters: int, n_scenes: int, out: Path):
        self.results = []
        self.iters = iters
        self.out = out
        self.scenes = []
        for scene_spec, capture_spec in get_benchmark("fastmover-6")[:n_scenes]:
            gt = SceneSynthService.make_scene(scene_spec, capture_spec.n_frames, seed=0)
            capture = SceneSynthService.make_capture(gt, capture_spec, name=scene_spec.name, seed=0)
            self.scenes.append((gt, capture))
        self.runs: Dict[str, Dict[AblationArm, object]] = {}

    def log_test(self, test_name: str, success: bool, details: str = ""):
        """Log test result"""
        status = "✅ PASS" if success else "❌ FAIL"
        print(f"{status} {test_name}")
        if details:
            print(f"   {details}")

        self.results.append({"test": test_name, "success": success, "details": details})

    def train_config(self) -> TrainConfig:
        return TrainConfig(total_iters=self.iters, holdout_every=max(1, self.iters // 4))

    def streetlike_oracle(self, gt) -> SyntheticOracle:
        return SyntheticOracle(gt, OracleConfig.from_preset(OraclePreset.streetlike))

    @staticmethod
    def within(analytic: np.ndarray, numeric: np.ndarray, rtol: float) -> bool:
        scale = max(1.0, float(np.abs(numeric).max()))
        return bool(np.allclose(analytic, numeric, rtol=rtol, atol=0.1 * rtol * scale))

    def gradient_case(self, seed: int) -> List[str]:
        """Names of the gradients that disagree with central differences for one random scene"""
        rng = np.random.default_rng(seed)
        n = 5 + (MAX_GAUSSIANS - 5) * seed // (GRADIENT_SEEDS - 1)
        cam = make_camera(width=64, height=64, fx=60.0)
        scene = random_scene(rng, n, cam)
        grad_image = rng.normal(size=(cam.height, cam.width, 3))
        pair = PosePair(
            Pose(quat_from_axis_angle(rng.normal(size=3), 0.03), rng.normal(scale=0.03, size=3)),
            Pose(quat_from_axis_angle(rng.normal(size=3), 0.03), rng.normal(scale=0.03, size=3)),
            0.3,
            0.6,
        )
        delta = np.array([rng.uniform(-1.5, 1.5)])
        tsp = TimestampParam(0, float(delta[0]))
        pose, t_mid = interp_pose(pair, tsp)
        rotation, translation = pose.rotation.copy(), pose.translation.copy()

        def loss() -> float:
            return float(np.sum(grad_image * render(scene, cam.with_pose(Pose(rotation, translation)), t_mid).image))

        def delta_loss() -> float:
            p, t = interp_pose(pair, TimestampParam(0, float(delta[0])))
            return float(np.sum(grad_image * render(scene, cam.with_pose(p), t).image))

        grads = render_backward(scene, cam.with_pose(pose), t_mid, grad_image)
        failed = [
            name
            for name in GAUSSIAN_FIELDS
            if not self.within(getattr(grads.gaussians, name), central_difference(loss, getattr(scene.gaussians, name)), 1e-4)
        ]
        if not self.within(grads.pose_rotation, central_difference(loss, rotation), 1e-4):
            failed.append("pose_rotation")
        if not self.within(grads.pose_translation, central_difference(loss, translation), 1e-4):
            failed.append("pose_translation")
        if not self.within(np.array([dloss_d_delta_t(grads, pair, tsp)]), central_difference(delta_loss, delta), 1e-3):
            failed.append("delta_t")
        return failed

    def test_gradients(self):
        """Every field, the pose and delta_t on random scenes of up to MAX_GAUSSIANS at 64x64"""
        saved = settings.ALPHA_MIN
        # no alpha cutoff, so the render is smooth everywhere
        settings.ALPHA_MIN = 1e-300
        try:
            failures = {}
            for seed in range(GRADIENT_SEEDS):
                failed = self.gradient_case(seed)
                if failed:
                    failures[seed] = failed
            success = not failures
            details = f"{GRADIENT_SEEDS} scenes, 5 to {MAX_GAUSSIANS} Gaussians"
            if failures:
                details += "; mismatches: " + "; ".join(f"seed {k}: {', '.join(v)}" for k, v in failures.items())
            self.log_test("Gradients against central differences", success, details)
            return success

        except Exception as e:
            self.log_test("Gradients against central differences", False, f"Exception: {e}")
            return False
        finally:
            settings.ALPHA_MIN = saved

    def test_delta_t_recovery(self):
        """Distillation-only descent on the bias from several initializations"""
        try:
            gt, capture = self.scenes[0]
            pair = capture.pose_pair(1)
            camera = capture.frames[0].camera
            pseudo = SyntheticOracle(gt, OracleConfig(hidden_s=0.3)).generate_pseudo((1, 2), pair, camera, factor=2)
            umap = UncertaintyMap.constant(1, pseudo.shape, 0.5)
            weights = TrainConfig().weights

            finals = []
            for init in DELTA_T_INITS:
                delta = np.array([init])
                state = AdamState()
                for _ in range(500):
                    step = distill_step(gt, camera, pair, TimestampParam(1, float(delta[0])), pseudo, umap, weights)
                    adam_step(state, {"delta_t": delta}, {"delta_t": np.array([step.delta_t_grad])}, 0.01)
                finals.append(float(sigmoid(delta[0])))

            worst = max(abs(s - 0.3) for s in finals)
            spread = max(finals) - min(finals)
            success = worst < 0.02 and spread < 0.05
            details = f"s = {', '.join(f'{s:.4f}' for s in finals)}; max |s - 0.3| = {worst:.4f}, spread = {spread:.4f}"
            self.log_test("Timestamp bias recovery", success, details)
            return success

        except Exception as e:
            self.log_test("Timestamp bias recovery", False, f"Exception: {e}")
            return False

    def test_joint_delta_t_recovery(self):
        """Timestamp bias under joint training with the scene learning rates live"""
        try:
            gt, capture = self.scenes[0]
            config = TrainConfig(
                total_iters=900,
                distill_period=1,
                resolution_schedule=[ResolutionStage(until_iter=900, factor=2)],
                holdout_every=900,
            ).for_arm(AblationArm.jto)
            result = TrainingService.train(
                capture,
                config,
                SyntheticOracle(gt, OracleConfig(hidden_s=0.3)),
                out_dir=self.out / "joint_delta_t",
                initial_scene=gt,
            )
            worst = float(np.max(np.abs(result.s - 0.3)))
            success = worst < 0.02
            self.log_test("Joint timestamp bias recovery", success, f"s = {', '.join(f'{s:.4f}' for s in result.s)}")
            return success

        except Exception as e:
            self.log_test("Joint timestamp bias recovery", False, f"Exception: {e}")
            return False

    def train_arms(self):
        """Every arm on every scene, identical data and seed"""
        for gt, capture in self.scenes:
            oracle = self.streetlike_oracle(gt)
            self.runs[capture.name] = {}
            for arm in AblationArm:
                print(f"   training {capture.name} {arm.value} ({self.iters} iterations)")
                self.runs[capture.name][arm] = TrainingService.train(
                    capture,
                    self.train_config().for_arm(arm),
                    oracle,
                    seed=0,
                    out_dir=self.out / capture.name / arm.name,
                )

    def test_ablation_trend(self):
        try:
            rows = []
            for gt, capture in self.scenes:
                for arm, result in self.runs[capture.name].items():
                    metrics = TrainingService.evaluate(result.scene, capture)
                    rows.append({"arm": arm.value, "scene": capture.name, "psnr": metrics["psnr"].mean(),
                                 "ssim": metrics["ssim"].mean(), "gms_ssim_proxy": metrics["gms_ssim_proxy"].mean()})
            summary = AnalyticsService.summarize_ablation(pd.DataFrame(rows))
            psnr = dict(zip(summary["arm"], summary["psnr"]))
            ud_gain = psnr[AblationArm.jto_ud.value] - psnr[AblationArm.jto.value]
            total_gain = psnr[AblationArm.jto_ud.value] - psnr[AblationArm.baseline.value]

            ordered = AnalyticsService.ablation_ordering_holds(summary)
            self.log_test(
                "Ablation ordering",
                ordered,
                ", ".join(f"{arm}: {value:.2f} dB" for arm, value in psnr.items()),
            )
            gaps = ud_gain >= 1.0 and total_gain >= 1.5
            self.log_test("Ablation PSNR gaps", gaps, f"+UD over +JTO: {ud_gain:.2f} dB, full over baseline: {total_gain:.2f} dB")
            return ordered and gaps

        except Exception as e:
            self.log_test("Ablation trend", False, f"Exception: {e}")
            return False

    def test_uncertainty_localization(self):
        try:
            ratios: List[float] = []
            for gt, capture in self.scenes:
                result = self.runs[capture.name][AblationArm.jto_ud]
                for pseudo in result.pseudo:
                    corrupted = pseudo.meta.error_mask
                    pose, t = interp_pose_at(capture.pose_pair(pseudo.frame_id), 0.5)
                    cam = capture.frames[0].camera.with_pose(pose).scaled(pseudo.factor)
                    movers = SceneSynthService.object_masks(gt, cam, t)
                    static = ~np.logical_or.reduce([*movers.values(), corrupted])
                    ratio = AnalyticsService.uncertainty_localization(result.umaps[pseudo.frame_id], corrupted, static)
                    if not np.isnan(ratio):
                        ratios.append(ratio)
            success = bool(ratios) and min(ratios) >= 2.0
            details = f"{len(ratios)} corrupted pseudo-frames, min ratio {min(ratios):.2f}" if ratios else "no corrupted pixels"
            self.log_test("Uncertainty localization", success, details)
            return success

        except Exception as e:
            self.log_test("Uncertainty localization", False, f"Exception: {e}")
            return False

    def test_static_classification(self):
        try:
            fractions = {
                f"{capture.name} {arm.value}": AnalyticsService.static_fraction(gt, self.runs[capture.name][arm].scene)
                for gt, capture in self.scenes
                for arm in (AblationArm.baseline, AblationArm.jto_ud)
            }
            success = all(value >= 0.9 for value in fractions.values())
            details = f"min static fraction {min(fractions.values()):.3f} ({min(fractions, key=fractions.get)})"
            self.log_test("Static background classification", success, details)
            return success

        except Exception as e:
            self.log_test("Static background classification", False, f"Exception: {e}")
            return False

    def test_flow_error_correlation(self):
        try:
            baseline = pd.concat(
                [AnalyticsService.flow_error_table(gt, c, self.runs[c.name][AblationArm.baseline].scene) for gt, c in self.scenes],
                ignore_index=True,
            )
            method = pd.concat(
                [AnalyticsService.flow_error_table(gt, c, self.runs[c.name][AblationArm.jto_ud].scene) for gt, c in self.scenes],
                ignore_index=True,
            )
            r, p = AnalyticsService.flow_error_correlation(baseline)
            correlated = bool(r > 0.5)
            self.log_test("Flow/error correlation", correlated, f"pearson r = {r:.3f} (p = {p:.3g}, {len(baseline)} objects)")

            reduction = AnalyticsService.top_quartile_error_reduction(baseline, method)
            reduced = bool(reduction >= 0.3)
            self.log_test("Top-quartile error reduction", reduced, f"mean error drop {100 * reduction:.1f}%")
            return correlated and reduced

        except Exception as e:
            self.log_test("Flow/error correlation", False, f"Exception: {e}")
            return False

    def test_determinism(self):
        """Two identical runs and a resumed run on the first scene"""
        try:
            gt, capture = self.scenes[0]
            config = self.train_config().model_copy(update={"checkpoint_every": max(1, self.iters // 2)})
            config = config.for_arm(AblationArm.jto_ud)
            first = TrainingService.train(capture, config, self.streetlike_oracle(gt), seed=7, out_dir=self.out / "determinism" / "a")
            second = TrainingService.train(capture, config, self.streetlike_oracle(gt), seed=7, out_dir=self.out / "determinism" / "b")
            identical = first.log.equals(second.log)

            half = config.checkpoint_every
            resumed = TrainingService.train(
                capture,
                config,
                self.streetlike_oracle(gt),
                seed=7,
                out_dir=self.out / "determinism" / "resumed",
                resume_from=self.out / "determinism" / "a" / f"ckpt_{half:06d}",
            )
            tail = first.log[first.log["iter"] >= half].reset_index(drop=True)
            resume_ok = tail.astype(float).equals(resumed.log.astype(float)) and np.array_equal(first.delta_t, resumed.delta_t)

            success = identical and resume_ok
            self.log_test("Determinism", success, f"repeat run identical: {identical}, resume identical: {resume_ok}")
            return success

        except Exception as e:
            self.log_test("Determinism", False, f"Exception: {e}")
            return False

    def run_all_tests(self):
        print("🧪 Starting acceptance checks")
        print("=" * 50)
        start = time.time()

        self.test_gradients()
        self.test_delta_t_recovery()
        self.test_joint_delta_t_recovery()
        print("\n🏋️  Training ablation arms")
        self.train_arms()
        self.test_ablation_trend()
        self.test_uncertainty_localization()
        self.test_static_classification()
        self.test_flow_error_correlation()
        self.test_determinism()

        print(f"\nElapsed: {(time.time() - start) / 60:.1f} min")
        return self.print_summary()

    def print_summary(self):
        total_tests = len(self.results)
        passed_tests = sum(1 for r in self.results if r["success"])
        failed_tests = total_tests - passed_tests

        print("\n" + "=" * 50)
        print("📊 ACCEPTANCE SUMMARY")
        print("=" * 50)
        print(f"Total Checks: {total_tests}")
        print(f"✅ Passed: {passed_tests}")
        print(f"❌ Failed: {failed_tests}")

        if failed_tests > 0:
            print("\n❌ Failed Checks:")
            for result in self.results:
                if not result["success"]:
                    print(f"   - {result['test']}: {result['details']}")

        print("\n" + "=" * 50)
        return failed_tests == 0


def main():
    parser = argparse.ArgumentParser(description="Benchmark-scale acceptance checks")
    parser.add_argument("--iters", type=int, default=2000, help="training iterations per arm")
    parser.add_argument("--scenes", type=int, default=6, help="number of fastmover scenes to use")
    parser.add_argument("--out", type=Path, default=Path("runs/acceptance"), help="run directory")
    args = parser.parse_args()

    logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    runner = AcceptanceRunner(args.iters, args.scenes, args.out)
    success = runner.run_all_tests()
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
