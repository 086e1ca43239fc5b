import numpy as np
import pandas as pd
import pytest

from app.models.domain import SceneModel, UncertaintyMap
from app.models.schemas import AblationArm, LearningRates, OracleConfig, ResolutionStage, TrainConfig
from app.oracles.adapters.synthetic import SyntheticOracle
from app.services.analytics import AnalyticsService
from app.services.scene_synth import SceneSynthService
from app.services.training import TrainingService


def flow_table(flows, errors, scene="s"):
    return pd.DataFrame(
        {"scene": scene, "object_id": list(range(len(flows))), "flow_px": flows, "error": errors}
    )


def test_flow_error_table_for_perfect_model(smoke):
    scene, capture = smoke
    table = AnalyticsService.flow_error_table(scene, capture, scene)
    assert list(table.columns) == ["scene", "object_id", "flow_px", "error"]
    assert list(table["object_id"]) == [0]
    assert table["error"].iloc[0] == 0.0
    expected = np.mean(
        [SceneSynthService.gt_flow_magnitude(scene, capture, (k, k + 1))[0] for k in capture.holdout_brackets]
    )
    assert table["flow_px"].iloc[0] == pytest.approx(expected)


def test_correlation_of_linear_table():
    r, p = AnalyticsService.flow_error_correlation(flow_table([1.0, 2.0, 4.0, 8.0], [0.1, 0.2, 0.4, 0.8]))
    assert r == pytest.approx(1.0)
    assert p < 0.01


def test_correlation_needs_three_objects():
    r, p = AnalyticsService.flow_error_correlation(flow_table([1.0, 2.0], [0.1, 0.3]))
    assert np.isnan(r) and np.isnan(p)


def test_top_quartile_error_reduction():
    baseline = flow_table([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])
    method = flow_table([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 2.0])
    assert AnalyticsService.top_quartile_error_reduction(baseline, method) == pytest.approx(0.5)


def test_top_quartile_without_overlap():
    baseline = flow_table([1.0], [1.0], scene="a")
    method = flow_table([1.0], [1.0], scene="b")
    assert np.isnan(AnalyticsService.top_quartile_error_reduction(baseline, method))


def test_uncertainty_localization_ratio():
    beta = np.ones((4, 4))
    beta[:2] = 3.0
    umap = UncertaintyMap(values=beta + np.log(-np.expm1(-beta)), frame_id=0)
    mover = np.zeros((4, 4), dtype=bool)
    mover[:2] = True
    assert AnalyticsService.uncertainty_localization(umap, mover, ~mover) == pytest.approx(3.0)
    assert np.isnan(AnalyticsService.uncertainty_localization(umap, np.zeros((4, 4), dtype=bool), ~mover))


def test_static_fraction_of_ground_truth(smoke):
    scene, _ = smoke
    assert AnalyticsService.static_fraction(scene, scene) == 1.0


def test_static_fraction_counts_short_lived_background(smoke):
    scene, _ = smoke
    trained = scene.copy()
    background = np.nonzero(scene.labels == -1)[0]
    trained.gaussians.log_beta[background[:8]] = np.log(0.1)
    assert AnalyticsService.static_fraction(scene, trained) == pytest.approx(1.0 - 8 / background.size)
    # movers are not counted
    trained.gaussians.log_beta[scene.labels >= 0] = np.log(0.1)
    assert AnalyticsService.static_fraction(scene, trained) == pytest.approx(1.0 - 8 / background.size)


def test_static_fraction_needs_labels(smoke):
    scene, _ = smoke
    unlabeled = SceneModel(gaussians=scene.gaussians)
    assert np.isnan(AnalyticsService.static_fraction(unlabeled, scene))


def test_summarize_ablation_orders_arms():
    table = pd.DataFrame(
        {
            "arm": ["+JTO+UD", "baseline", "+JTO", "+pseudo", "baseline"],
            "scene": ["a", "a", "a", "a", "b"],
            "psnr": [24.0, 20.0, 23.0, 22.0, 22.0],
            "ssim": [0.8, 0.6, 0.7, 0.7, 0.6],
            "gms_ssim_proxy": [0.1, 0.3, 0.2, 0.2, 0.3],
        }
    )
    summary = AnalyticsService.summarize_ablation(table)
    assert list(summary["arm"]) == [arm.value for arm in AblationArm]
    assert summary["psnr"].iloc[0] == pytest.approx(21.0)
    assert AnalyticsService.ablation_ordering_holds(summary)
    assert not AnalyticsService.ablation_ordering_holds(summary.iloc[::-1].reset_index(drop=True))


def test_delta_t_trajectories():
    log = pd.DataFrame({"iter": [0, 1], "photo_loss": [0.3, 0.2], "s_00": [0.5, 0.45], "s_01": [0.5, 0.55]})
    long = AnalyticsService.delta_t_trajectories(log)
    assert list(long.columns) == ["iter", "frame_id", "s"]
    assert len(long) == 4
    assert list(long[long["frame_id"] == 1]["s"]) == [0.5, 0.55]
    assert set(AnalyticsService.delta_t_trajectories(log, frame_ids=[0])["frame_id"]) == {0}
    assert AnalyticsService.delta_t_trajectories(log[["iter", "photo_loss"]]).empty


@pytest.mark.slow
def test_uncertainty_concentrates_on_corrupted_movers(smoke):
    scene, capture = smoke
    frozen = LearningRates(
        mu=0.0, mu_final=0.0, rot=0.0, log_scale=0.0, opacity_logit=0.0, color=0.0, velocity=0.0, tau=0.0, log_beta=0.0,
        delta_t=0.0, umap=0.05,
    )
    config = TrainConfig(
        total_iters=450,
        distill_period=1,
        lr=frozen,
        resolution_schedule=[ResolutionStage(until_iter=450, factor=2)],
        holdout_every=450,
    ).for_arm(AblationArm.jto_ud)
    oracle = SyntheticOracle(scene, OracleConfig(mover_warp_px=3.0))
    result = TrainingService.train(capture, config, oracle, initial_scene=scene)
    for pseudo in result.pseudo:
        mask = pseudo.meta.error_mask
        ratio = AnalyticsService.uncertainty_localization(result.umaps[pseudo.frame_id], mask, ~mask)
        assert ratio >= 2.0
