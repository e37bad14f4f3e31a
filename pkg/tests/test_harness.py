import json
import tempfile
import unittest
from pathlib import Path as FilePath

from app.core.evaluation import predictor_rmse
from app.core.harness import (
    build_processing_trace,
    degradation_study,
    ece_study,
    fit_clusters,
    prepare,
    run_pipeline,
    scoring_rows,
    sweep_quee,
    train_quee_gates,
    trend_checks,
)
from app.schemas.experiment import TrainingConfig
from app.schemas.topology import TopologyConfig
from app.utils.errors import StageError
from quee_fixtures import small_config


def _point(policy, cost, accuracy):
    return {"policy": policy, "param": f"{cost:g}", "accuracy": accuracy, "accuracy_ci": 0.0, "cost": cost, "cost_ci": 0.0}


class TestRunPipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = FilePath(cls.tmp.name)
        cls.result = run_pipeline(small_config(str(cls.root / "a")))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_writes_run_directory(self):
        out = self.root / "a"
        for name in ("config.yaml", "model.json", "curves.csv", "summary.json", "traces_quee.ndjson", "traces_next-best-step.ndjson"):
            self.assertTrue((out / name).exists(), name)
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        self.assertEqual(summary["num_paths"], 9)
        self.assertEqual(set(summary["trend_checks"]), {
            "quee_beats_threshold_low_cost",
            "quee_matches_next_best_step",
            "degradation_rmse_monotone",
            "degradation_gap_widens",
        })

    def test_every_policy_is_swept(self):
        counts = {}
        for point in self.result.sweep.points:
            counts[point.policy] = counts.get(point.policy, 0) + 1
        self.assertEqual(counts, {"quee": 3, "oracle": 3, "threshold-exit": 3, "fixed-path": 9, "next-best-step": 2})

    def test_trace_file_has_one_line_per_sample_and_lambda(self):
        lines = (self.root / "a" / "traces_quee.ndjson").read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), 3 * len(self.result.workspace.dataset.test))

    def test_oracle_bounds_quee(self):
        by_param = {(p.policy, p.param): p for p in self.result.sweep.points}
        for lam in ("0", "0.5", "5"):
            self.assertLessEqual(by_param[("oracle", lam)].loss01c, by_param[("quee", lam)].loss01c + 1e-12)

    def test_rerun_is_byte_identical(self):
        run_pipeline(small_config(str(self.root / "b")))
        for name in ("curves.csv", "model.json", "traces_quee.ndjson"):
            self.assertEqual((self.root / "a" / name).read_bytes(), (self.root / "b" / name).read_bytes(), name)

    def test_rmse_is_reported(self):
        self.assertIsNotNone(self.result.rmse)
        self.assertGreaterEqual(self.result.rmse.overall, 0.0)


class TestStages(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_processing_trace(self):
        self.assertEqual(build_processing_trace()["step_1"], "paths")
        self.assertEqual(build_processing_trace()["step_7"], "write")

    def test_missing_dataset_fails_in_data_stage(self):
        config = small_config(self.tmp.name, dataset_file=str(FilePath(self.tmp.name) / "absent.ndjson"), synthetic=None)
        with self.assertRaises(StageError) as ctx:
            prepare(config)
        self.assertEqual(ctx.exception.stage, "data")
        self.assertIsInstance(ctx.exception.cause, FileNotFoundError)

    def test_single_lambda_gives_single_point(self):
        config = small_config(self.tmp.name, lambdas=(0.5,))
        ws = prepare(config)
        gates = train_quee_gates(ws, fit_clusters(ws))
        points = sweep_quee(ws, gates).points
        self.assertEqual(len(points), 1)
        self.assertEqual(points[0].param, "0.5")


class TestStudies(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = small_config(cls.tmp.name)
        cls.ws = prepare(cls.config)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_ece_study_deduplicates_k(self):
        rows = ece_study(self.config, k_list=(3, 1, 3), with_curves=False, ws=self.ws)
        self.assertEqual([r.k for r in rows], [1, 3])
        out = FilePath(self.tmp.name)
        self.assertTrue((out / "ece.csv").exists())
        self.assertTrue((out / "ece_per_path.csv").exists())
        for row in rows:
            self.assertGreaterEqual(row.report.overall, 0.0)
            self.assertGreaterEqual(row.ece_ci, 0.0)

    def test_zero_noise_reproduces_clean_curve(self):
        clean = fit_clusters(self.ws)
        gates = train_quee_gates(self.ws, clean)
        baseline = sweep_quee(self.ws, gates).points
        rows = degradation_study(self.config, noise_levels=(0.3, 0.0), ws=self.ws)
        zero = [r for r in rows if r.noise == 0.0]
        self.assertEqual([r.point for r in zero], baseline)
        self.assertAlmostEqual(zero[0].rmse, predictor_rmse(gates, scoring_rows(self.ws, clean)).overall)
        self.assertEqual(rows[0].noise, 0.0)
        self.assertTrue((FilePath(self.tmp.name) / "degradation.csv").exists())


class TestDegradation(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        training = TrainingConfig(hidden_dim=8, learning_rate=1e-2, max_epochs=30, patience=30, batch_size=128, n_candidates=10)
        cls.rows = degradation_study(small_config(cls.tmp.name, training=training), noise_levels=(0.0, 1e6))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_saturated_noise_raises_rmse_against_clean_targets(self):
        rmse = {row.noise: row.rmse for row in self.rows}
        self.assertGreater(rmse[1e6], rmse[0.0])
        self.assertTrue(trend_checks({"degradation": [r.to_dict() for r in self.rows]})["degradation_rmse_monotone"])

    def test_one_point_per_lambda_and_level(self):
        self.assertEqual([row.noise for row in self.rows], [0.0] * 3 + [1e6] * 3)
        self.assertEqual([row.point.param for row in self.rows[:3]], ["0", "0.5", "5"])


class TestSmallPathCap(unittest.TestCase):
    def test_pipeline_runs_with_two_paths(self):
        topo = TopologyConfig(num_exits=3, block_flops=(1.0, 2.0, 1.0), bit_widths=(4, 8), path_cap=2)
        with tempfile.TemporaryDirectory() as tmp:
            result = run_pipeline(small_config(tmp, topology=topo))
        self.assertEqual(set(result.workspace.path_set.keys), {"8-8-8", "8"})
        thresholds = [p for p in result.sweep.points if p.policy == "threshold-exit"]
        self.assertEqual(len(thresholds), 3)
        self.assertEqual({p.param for p in result.sweep.points if p.policy == "fixed-path"}, {"8", "8-8-8"})


class TestTrendChecks(unittest.TestCase):
    def test_handmade_summary(self):
        summary = {
            "curves": [
                _point("quee", 0.2, 0.7),
                _point("quee", 0.5, 0.85),
                _point("quee", 1.0, 0.9),
                _point("threshold-exit", 0.2, 0.5),
                _point("threshold-exit", 0.5, 0.7),
                _point("threshold-exit", 1.0, 0.9),
                _point("next-best-step", 0.5, 0.8),
            ],
            "degradation": [
                {"noise": 0.0, "rmse": 0.1, "accuracy": 0.9, "cost": 1.0},
                {"noise": 0.0, "rmse": 0.1, "accuracy": 0.7, "cost": 0.2},
                {"noise": 0.3, "rmse": 0.2, "accuracy": 0.8, "cost": 1.0},
                {"noise": 0.3, "rmse": 0.2, "accuracy": 0.69, "cost": 0.2},
            ],
        }
        self.assertEqual(
            trend_checks(summary),
            {
                "quee_beats_threshold_low_cost": True,
                "quee_matches_next_best_step": True,
                "degradation_rmse_monotone": True,
                "degradation_gap_widens": True,
            },
        )

    def test_degradation_gap_is_read_at_matched_cost(self):
        # at lambda 0 the noisy gates buy a little more compute and land above the clean accuracy
        rows = [
            {"noise": 0.0, "rmse": 0.09, "accuracy": 0.7855, "cost": 0.99},
            {"noise": 0.0, "rmse": 0.09, "accuracy": 0.60, "cost": 0.2},
            {"noise": 0.3, "rmse": 0.13, "accuracy": 0.79, "cost": 0.999},
            {"noise": 0.3, "rmse": 0.13, "accuracy": 0.70, "cost": 0.9},
            {"noise": 0.3, "rmse": 0.13, "accuracy": 0.598, "cost": 0.2},
        ]
        checks = trend_checks({"degradation": rows})
        self.assertTrue(checks["degradation_gap_widens"])
        self.assertTrue(checks["degradation_rmse_monotone"])

    def test_degradation_gap_needs_overlapping_costs(self):
        rows = [
            {"noise": 0.0, "rmse": 0.1, "accuracy": 0.9, "cost": 0.9},
            {"noise": 0.0, "rmse": 0.1, "accuracy": 0.8, "cost": 0.8},
            {"noise": 0.3, "rmse": 0.2, "accuracy": 0.5, "cost": 0.3},
            {"noise": 0.3, "rmse": 0.2, "accuracy": 0.4, "cost": 0.2},
        ]
        self.assertIsNone(trend_checks({"degradation": rows})["degradation_gap_widens"])

    def test_empty_summary(self):
        self.assertTrue(all(value is None for value in trend_checks({}).values()))


if __name__ == "__main__":
    unittest.main()
