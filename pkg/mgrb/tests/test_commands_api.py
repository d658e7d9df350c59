import json
import tempfile
from dataclasses import replace
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APIClient

from mgrb.experiment import run, validate_config
from mgrb.models import ExperimentRun, PhaseRecord
from mgrb.tests.helpers import tiny_config


class CommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config_path = self.root / "tiny.json"
        self.config_path.write_text(json.dumps(tiny_config()), encoding="utf-8")

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args) -> str:
        out = StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()

    def test_run_stores_the_run(self):
        out = self.call("run", "--config", str(self.config_path), "--output-dir", str(self.root / "tiny"))
        self.assertIn("Stored as run", out)
        self.assertIn("Avg", out)
        stored = ExperimentRun.objects.get()
        self.assertEqual(stored.name, "tiny")
        self.assertEqual(stored.num_phases, 3)
        self.assertEqual(stored.config["seed"], 7)
        self.assertTrue((self.root / "tiny" / "summary.json").exists())

    def test_run_with_overrides_and_default_output(self):
        with override_settings(MGRB_OUTPUT_ROOT=self.root / "runs"):
            self.call("run", "--config", str(self.config_path), "--set", "name=renamed", "--no-db")
        self.assertTrue((self.root / "runs" / "renamed" / "phase_metrics.csv").exists())
        self.assertFalse(ExperimentRun.objects.exists())

    def test_run_resumes_into_the_same_directory(self):
        out_dir = self.root / "tiny"
        self.call("run", "--config", str(self.config_path), "--output-dir", str(out_dir), "--no-db")
        finished = (out_dir / "phase_records.jsonl").read_bytes()
        (out_dir / "checkpoint_phase2.npz").unlink()
        out = self.call("run", "--config", str(self.config_path), "--resume-from", str(out_dir))
        self.assertIn("Stored as run", out)
        self.assertEqual((out_dir / "phase_records.jsonl").read_bytes(), finished)
        self.assertEqual(ExperimentRun.objects.get().num_phases, 3)
        with self.assertRaises(CommandError):
            self.call("run", "--config", str(self.config_path), "--resume-from", str(self.root / "none"))

    def test_run_rejects_an_invalid_config(self):
        with self.assertRaises(CommandError):
            self.call("run", "--config", str(self.config_path), "--set", "split.m=5", "--no-db")
        with self.assertRaises(CommandError):
            self.call("run", "--config", str(self.config_path), "--set", "ratio=2")

    def test_ablation_no_cls_grid(self):
        out = self.call(
            "ablation", "--grid", "no-cls", "--config", str(self.config_path),
            "--output-dir", str(self.root / "grid"),
        )
        self.assertIn("MGRB-no-cls", out)
        self.assertEqual(
            sorted(ExperimentRun.objects.values_list("name", flat=True)), ["MGRB", "MGRB-no-cls"]
        )
        self.assertTrue((self.root / "grid" / "MGRB-no-cls" / "summary.json").exists())

    def test_ablation_rejects_bad_k_values(self):
        with self.assertRaises(CommandError):
            self.call("ablation", "--grid", "clusters", "--config", str(self.config_path), "--k-values", "2,x")

    def test_report_with_diff(self):
        grid = self.root / "grid"
        self.call(
            "ablation", "--grid", "no-cls", "--config", str(self.config_path),
            "--output-dir", str(grid), "--no-db",
        )
        xlsx = self.root / "report.xlsx"
        out = self.call("report", "--dir", str(grid), "--diff", "MGRB", "MGRB-no-cls", "--xlsx", str(xlsx))
        self.assertIn("variant", out)
        self.assertIn("MGRB-no-cls - MGRB", out)
        self.assertTrue((grid / "diff_MGRB_MGRB-no-cls.csv").exists())
        self.assertTrue(xlsx.exists())

    def test_report_unknown_run(self):
        grid = self.root / "grid"
        self.call("run", "--config", str(self.config_path), "--output-dir", str(grid / "tiny"), "--no-db")
        with self.assertRaises(CommandError):
            self.call("report", "--dir", str(grid), "--diff", "tiny", "missing")
        with self.assertRaises(CommandError):
            self.call("report", "--dir", str(self.root / "empty"))

    def test_generate_synthetic(self):
        out_dir = self.root / "data"
        out = self.call("generate_synthetic", "--out", str(out_dir), "--groups", "2", "--fine", "2", "--dim", "3")
        self.assertIn("4 classes", out)
        self.assertTrue((out_dir / "data.csv").exists())
        schema = json.loads((out_dir / "schema.json").read_text(encoding="utf-8"))
        self.assertEqual(schema["label"], "label")

    def test_generate_synthetic_rejects_bad_sizes(self):
        with self.assertRaises(CommandError):
            self.call("generate_synthetic", "--out", str(self.root / "data"), "--dim", "0")


class ApiTests(TestCase):
    @classmethod
    def setUpTestData(cls):
        base = validate_config(tiny_config())
        cls.first = ExperimentRun.from_artifacts(run(replace(base, name="first")))
        cls.second = ExperimentRun.from_artifacts(run(replace(base, name="second")))
        cls.other = ExperimentRun.from_artifacts(run(replace(base, name="other", seed=8)))

    def setUp(self):
        self.client = APIClient()

    def test_list_runs(self):
        response = self.client.get(reverse("runs"))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data), 3)
        self.assertEqual(response.data[0]["name"], "other")

    def test_list_runs_by_name(self):
        response = self.client.get(reverse("runs"), {"name": "first"})
        self.assertEqual([r["run_id"] for r in response.data], [self.first.run_id])

    def test_view_run(self):
        response = self.client.get(reverse("view-run", args=[self.first.run_id]))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data["phases"]), 3)
        self.assertEqual(len(response.data["class_names"]), 6)
        self.assertNotIn("confusion", response.data["phases"][0])

    def test_view_missing_run(self):
        response = self.client.get(reverse("view-run", args=[9999]))
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)
        self.assertEqual(response.data, {"error": "Run not found"})

    def test_view_phase(self):
        response = self.client.get(reverse("view-phase", args=[self.first.run_id, 1]))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data["confusion"]), 4)
        self.assertEqual(response.data["n_old"], 2)
        missing = self.client.get(reverse("view-phase", args=[self.first.run_id, 7]))
        self.assertEqual(missing.status_code, status.HTTP_404_NOT_FOUND)

    def test_compare_same_split(self):
        response = self.client.get(reverse("compare-runs", args=[self.first.run_id, self.second.run_id]))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["phase"], 2)
        self.assertEqual(len(response.data["classes"]), 6)
        self.assertTrue(all(row["delta"] == 0.0 for row in response.data["classes"]))

    def test_compare_at_a_phase(self):
        url = reverse("compare-runs", args=[self.first.run_id, self.second.run_id])
        self.assertEqual(len(self.client.get(url, {"phase": 0}).data["classes"]), 2)
        self.assertEqual(self.client.get(url, {"phase": 3}).status_code, status.HTTP_400_BAD_REQUEST)
        self.assertEqual(self.client.get(url, {"phase": "x"}).status_code, status.HTTP_400_BAD_REQUEST)

    def test_compare_different_splits(self):
        response = self.client.get(reverse("compare-runs", args=[self.first.run_id, self.other.run_id]))
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_compare_missing_run(self):
        response = self.client.get(reverse("compare-runs", args=[self.first.run_id, 9999]))
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_phase_records_are_unique_per_run(self):
        self.assertEqual(PhaseRecord.objects.filter(run=self.first).count(), 3)
        self.assertEqual(self.first.phases.last().classes_seen, 6)
