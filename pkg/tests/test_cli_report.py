import json
import tempfile
import unittest
from pathlib import Path

from app.core.evaluation import write_curves
from app.schemas.experiment import OperatingPoint
from src.quee_cli import collect_run, main
from src.report_render import render_curves_pdf, render_summary_markdown

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.yaml")

POINTS = [
    OperatingPoint("quee", "0", 0.82, 0.01, 0.9, 0.01, 0.18, 21.6),
    OperatingPoint("quee", "1", 0.61, 0.02, 0.3, 0.01, 0.69, 7.2),
    OperatingPoint("threshold-exit", "0.5", 0.55, 0.02, 0.4, 0.02),
    OperatingPoint("fixed-path", "8", 0.5, 0.02, 0.33, 0.0),
]


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_gen_writes_records(self):
        code = main(["gen", "--config", SMOKE, "--out", str(self.out), "--seed", "1", "--no-registry"])
        self.assertEqual(code, 0)
        lines = (self.out / "records.ndjson").read_text(encoding="utf-8").splitlines()
        self.assertEqual(json.loads(lines[0])["format"], "quee-records")
        self.assertEqual(len(lines), 601)

    def test_invalid_flag_value_exits_with_two(self):
        self.assertEqual(main(["sweep", "--config", SMOKE, "--k", "0", "--out", str(self.out), "--no-registry"]), 2)

    def test_missing_model_fails(self):
        code = main(["route", "--config", SMOKE, "--model", str(self.out / "absent.json"), "--out", str(self.out), "--no-registry"])
        self.assertNotEqual(code, 0)

    def test_report_from_run_directory(self):
        write_curves(POINTS, self.out / "curves.csv")
        (self.out / "summary.json").write_text(json.dumps({"config_hash": "abc", "num_paths": 9}), encoding="utf-8")
        self.assertEqual(main(["report", "--out", str(self.out)]), 0)
        markdown = (self.out / "summary.md").read_text(encoding="utf-8")
        self.assertIn("## quee", markdown)
        self.assertIn("`abc`", markdown)
        self.assertTrue((self.out / "curves.pdf").read_bytes().startswith(b"%PDF"))

    def test_collect_run_needs_outputs(self):
        with self.assertRaises(FileNotFoundError):
            collect_run(self.out)


class TestRendering(unittest.TestCase):
    def test_markdown_sections(self):
        summary = {
            "config_hash": "abc",
            "num_paths": 9,
            "k": 20,
            "curves": [p.to_dict() for p in POINTS],
            "rmse": {"overall": 0.04, "rows": 120, "per_gate": {"2": 0.03, "3": 0.05}},
            "ece": [{"k": 1, "ece": 0.2, "ece_ci": 0.01}, {"k": 20, "ece": 0.05, "ece_ci": 0.01}],
            "trend_checks": {"quee_beats_threshold_low_cost": True, "degradation_gap_widens": None},
        }
        text = render_summary_markdown(summary)
        self.assertIn("K = 20", text)
        self.assertIn("| 0 | 0.8200 ± 0.0100 | 0.9000 ± 0.0100 | 0.1800 |", text)
        self.assertIn("| 0.5 | 0.5500 ± 0.0200 | 0.4000 ± 0.0200 | - |", text)
        self.assertIn("gate 3: 0.0500", text)
        self.assertIn("| 20 | 0.0500 | 0.0100 |", text)
        self.assertIn("quee_beats_threshold_low_cost: yes", text)
        self.assertIn("degradation_gap_widens: n/a", text)

    def test_pdf(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = render_curves_pdf(POINTS, Path(tmp) / "curves.pdf")
            self.assertTrue(path.read_bytes().startswith(b"%PDF"))


if __name__ == "__main__":
    unittest.main()
