"""Test stage planning, pipeline runs, checkpoints and the ablation table."""

import json
import time

import numpy as np
import pytest

from components.errors import ConfigError, StageOrderError
from components.feature_ops import camera_means, subtract_camera_mean, subtract_other_tracklet_mean
from components.interfaces import Config
from components.pipeline import (
    ablation_variants,
    check_inputs,
    format_ablation_table,
    label_file_name,
    plan_stages,
    run_pipeline,
)
from components.models import DbscanParams, FeatureSet
from history.artifacts import CheckpointKind, find_last, load_distance_checkpoint, load_features, read_checkpoint
from unit.fixtures import Stack


class TestPlanStages:
    """Test stage order checks."""

    def test_tracklet_after_distance_stage(self):
        """A tracklet stage after rerank acts on distances."""
        plan = plan_stages(["normalize", "rerank", "tracklet", "rank"])
        assert [p.on_distances for p in plan] == [False, False, True, False]
        assert [p.index for p in plan] == [0, 1, 2, 3]

    def test_full_stack_is_valid(self):
        """The full stage list plans without error."""
        assert [p.name for p in plan_stages(Stack.FULL)] == list(Stack.FULL)

    @pytest.mark.parametrize(
        "stages",
        [
            ["rank", "normalize"],
            ["normalize", "evaluate"],
            ["normalize", "normalize"],
            ["normalize", "rerank", "camera_subtract"],
            ["normalize", "camera_verify", "rerank"],
            ["normalize", "fuse_eq4", "tracklet", "rerank"],
            ["normalize", "cluster", "tracklet"],
            ["normalize", "sharpen"],
        ],
    )
    def test_rejected_orders(self, stages):
        """Out-of-order, repeated and unknown stages are rejected."""
        with pytest.raises(StageOrderError):
            plan_stages(stages)

    def test_cluster_after_evaluate(self):
        """Clustering may close a labeled run."""
        assert plan_stages([*Stack.BASELINE, "cluster"])[-1].name == "cluster"


class TestAblationVariants:
    """Test the cumulative variant list."""

    def test_cumulative_in_fixed_order(self):
        """Baseline first, then one stage at a time in ablation order."""
        variants = ablation_variants(Stack.POSTPROCESSING)
        assert [name for name, _ in variants] == [
            "baseline",
            "+rerank",
            "+tracklet",
            "+camera_verify",
            "+camera_subtract",
        ]
        assert variants[0][1] == ["normalize", "rank", "evaluate"]
        assert variants[2][1] == ["normalize", "rerank", "tracklet", "rank", "evaluate"]
        assert variants[-1][1] == list(Stack.POSTPROCESSING)

    def test_variants_plan(self):
        """Every variant is itself a valid stage list."""
        for _, stages in ablation_variants(Stack.FULL):
            plan_stages(stages)

    def test_cluster_left_out(self):
        """Clustering is not part of any variant."""
        variants = ablation_variants([*Stack.BASELINE, "cluster"])
        assert variants == [("baseline", list(Stack.BASELINE))]


class TestCheckInputs:
    """Test that optional stages find their inputs."""

    @pytest.mark.parametrize(
        "stage,field",
        [("average_views", "inputs.views"), ("ensemble", "inputs.models"), ("fuse_eq4", "inputs.camera")],
    )
    def test_missing_optional_input(self, stage, field):
        """The missing input is named."""
        cfg = Config.from_dict({"inputs": {"main": "main.json"}})
        with pytest.raises(ConfigError) as exc:
            check_inputs(["normalize", stage], cfg)
        assert exc.value.field == field


class TestRunPipeline:
    """Test end-to-end runs on the synthetic fixture."""

    def test_baseline_checkpoints(self, fixture_dir):
        """Every stage leaves a numbered directory with stage.json."""
        cfg = Config(fixture_dir(Stack.BASELINE))
        result = run_pipeline(cfg)
        workdir = cfg.workdir
        assert sorted(p.name for p in workdir.iterdir()) == ["00_normalize", "01_rank", "02_evaluate"]
        assert read_checkpoint(workdir / "00_normalize").kind is CheckpointKind.FEATURES
        ranking = (workdir / "01_rank" / "ranking.txt").read_text(encoding="utf-8").splitlines()
        assert len(ranking) == 40
        assert ranking[0].startswith("id0000_t0_f2: ")
        assert len(ranking[0].split(": ")[1].split()) == 100
        report = json.loads((workdir / "02_evaluate" / "report.json").read_text(encoding="utf-8"))
        assert report["mAP"] == round(result.report.mAP, 6)
        assert 0.0 < result.report.mAP <= 1.0
        assert [r.variant for r in result.ablation] == ["baseline"]

    def test_distance_checkpoint_reloads(self, fixture_dir):
        """The re-ranked distance can be reloaded from its stage directory."""
        cfg = Config(fixture_dir(["normalize", "rerank", "rank", "evaluate"]))
        run_pipeline(cfg)
        stage_dir = find_last(cfg.workdir, CheckpointKind.DISTANCE)
        assert stage_dir.name == "01_rerank"
        d = load_distance_checkpoint(stage_dir)
        assert d.shape == (40, 200)

    def test_stale_stage_directories_removed(self, fixture_dir):
        """A rerun with fewer stages leaves no stale directories."""
        cfg = Config(fixture_dir(["normalize", "rerank", "rank", "evaluate"]))
        run_pipeline(cfg)
        run_pipeline(cfg, stages=list(Stack.BASELINE))
        assert sorted(p.name for p in cfg.workdir.iterdir()) == ["00_normalize", "01_rank", "02_evaluate"]

    def test_cluster_stage_writes_labels(self, fixture_dir):
        """Clustering writes one label file per parameter set."""
        cfg = Config(fixture_dir([*Stack.BASELINE, "cluster"]))
        result = run_pipeline(cfg)
        name = label_file_name(DbscanParams(0.6, 2))
        assert name == "labels_eps0.6_ms2.csv"
        lines = (cfg.workdir / "03_cluster" / name).read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1 + 40 + 200
        assert len(result.state.labels) == 1

    def test_image_to_track_and_distance_ensemble(self, fixture_dir):
        """The i2t and distance-ensemble options run end to end."""
        path = fixture_dir(
            ["normalize", "ensemble", "rerank", "rank", "evaluate"],
            extra_config={"params": {"ensemble_mode": "distances"}, "evaluation": {"i2t": True}},
        )
        result = run_pipeline(Config(path))
        assert result.state.ranking.i2t
        assert 0.0 < result.report.mAP <= 1.0

    @pytest.mark.slow
    @pytest.mark.integration
    def test_full_stack_ablation_rows(self, fixture_dir):
        """The full stack reports the baseline plus every added stage."""
        result = run_pipeline(Config(fixture_dir(Stack.FULL)))
        assert len(result.ablation) >= 6
        assert result.ablation[0].variant == "baseline"
        assert list(result.ablation[-1].stages) == list(Stack.FULL)
        table = format_ablation_table(result.ablation)
        assert table.splitlines()[0].startswith("variant")
        assert len(table.splitlines()) == 2 + len(result.ablation)


    @pytest.mark.slow
    @pytest.mark.integration
    @pytest.mark.parametrize("seed", range(10))
    def test_postprocessing_never_lowers_map(self, standard_dir, seed):
        """Each added stage helps or holds, ten points overall, within a minute."""
        cfg = Config(standard_dir(Stack.POSTPROCESSING, seed=seed))
        started = time.perf_counter()
        result = run_pipeline(cfg)
        elapsed = time.perf_counter() - started
        assert [row.variant for row in result.ablation] == [
            "baseline",
            "+rerank",
            "+tracklet",
            "+camera_verify",
            "+camera_subtract",
        ]
        maps = [row.map for row in result.ablation]
        for before, after in zip(maps, maps[1:]):
            assert after >= before
        assert maps[-1] - maps[0] >= 0.10
        assert elapsed < 60.0

    def test_camera_mean_all(self, standard_dir):
        """camera_mean: all subtracts the plain per-camera mean of query and gallery."""
        cfg = Config(
            standard_dir(
                ["normalize", "camera_subtract", "rank"],
                extra_config={"params": {"camera_mean": "all", "alpha": 0.5}},
            )
        )
        run_pipeline(cfg)
        (q, q_metas), (g, g_metas) = load_features(cfg.workdir / "00_normalize")
        union = FeatureSet(np.vstack([q.data, g.data]))
        metas = q_metas + g_metas
        expected = subtract_camera_mean(union, metas, camera_means(union, metas), 0.5)
        (q2, _), (g2, _) = load_features(cfg.workdir / "01_camera_subtract")
        assert np.allclose(np.vstack([q2.data, g2.data]), expected.data, atol=1e-6)

    def test_camera_mean_leaves_own_tracklet_out(self, standard_dir):
        """The default mode differs from the plain camera mean."""
        cfg = Config(standard_dir(["normalize", "camera_subtract", "rank"]))
        run_pipeline(cfg)
        (q, q_metas), (g, g_metas) = load_features(cfg.workdir / "00_normalize")
        union = FeatureSet(np.vstack([q.data, g.data]))
        metas = q_metas + g_metas
        expected = subtract_other_tracklet_mean(union, metas, cfg.params.alpha)
        (q2, _), (g2, _) = load_features(cfg.workdir / "01_camera_subtract")
        assert np.allclose(np.vstack([q2.data, g2.data]), expected.data, atol=1e-6)

    def test_deterministic_rerun(self, fixture_dir):
        """Two runs leave byte-identical artifacts and equal scores."""
        cfg = Config(
            fixture_dir(
                ["normalize", "camera_subtract", "tracklet", "rerank", "camera_verify", "rank", "evaluate"]
            )
        )

        def snapshot() -> dict:
            return {
                str(p.relative_to(cfg.workdir)): p.read_bytes()
                for p in sorted(cfg.workdir.rglob("*"))
                if p.is_file()
            }

        first = run_pipeline(cfg)
        artifacts = snapshot()
        second = run_pipeline(cfg)
        assert len(artifacts) >= 6 * 2
        assert snapshot() == artifacts
        assert first.report.mAP == second.report.mAP
