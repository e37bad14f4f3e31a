import tempfile
import unittest
from pathlib import Path
from unittest import mock

from app.db import session
from app.db.models import get_experiment_run, list_experiment_runs, store_experiment_run
from app.routes.runs import get_history, get_run
from app.schemas.experiment import OperatingPoint


class TestExperimentRegistry(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        patcher = mock.patch.object(session, "DB_PATH", Path(self.tmp.name) / "runs.db")
        patcher.start()
        self.addCleanup(patcher.stop)
        self.addCleanup(self.tmp.cleanup)

    def test_stored_run_is_readable(self):
        summary = {"curves": [{"policy": "quee", "cost": 0.4}], "rmse": {"overall": 0.05}}
        run_id = store_experiment_run("sweep", "cfg", "topo", 9, summary)
        stored = get_experiment_run(run_id)
        self.assertEqual(stored["command"], "sweep")
        self.assertEqual(stored["num_paths"], 9)
        self.assertEqual(stored["summary"], summary)
        self.assertNotIn("summary_json", stored)

    def test_unknown_run(self):
        self.assertIsNone(get_experiment_run("missing"))
        self.assertIsNone(get_run("missing"))

    def test_run_curves_are_grouped_by_policy(self):
        points = [
            OperatingPoint("quee", "0", 0.8, 0.01, 0.9, 0.01, 0.2, 21.6),
            OperatingPoint("threshold-exit", "0.5", 0.6, 0.02, 0.5, 0.02),
            OperatingPoint("quee", "1", 0.6, 0.02, 0.3, 0.01, 0.7, 7.2),
        ]
        run_id = store_experiment_run("sweep", "cfg", "topo", 9, {"curves": [p.to_dict() for p in points]})
        curves = get_run(run_id)["curves"]
        self.assertEqual(sorted(curves), ["quee", "threshold-exit"])
        self.assertEqual([p["cost"] for p in curves["quee"]], [0.3, 0.9])
        self.assertEqual(get_run(store_experiment_run("train", "cfg", "topo", 9, {}))["curves"], {})

    def test_history_is_limited(self):
        for i in range(3):
            store_experiment_run("train", f"cfg{i}", "topo", 5, {}, run_id=f"run-{i}")
        self.assertEqual(len(list_experiment_runs(limit=2)), 2)
        self.assertEqual({row["id"] for row in get_history()}, {"run-0", "run-1", "run-2"})


if __name__ == "__main__":
    unittest.main()
