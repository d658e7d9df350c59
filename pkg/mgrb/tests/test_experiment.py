import json
import tempfile
from dataclasses import replace
from pathlib import Path

from django.test import SimpleTestCase

from mgrb.exceptions import ConfigError, InvalidArgument
from mgrb.experiment import (
    COMPONENT_VARIANTS,
    ablation_configs,
    apply_overrides,
    diff_runs,
    discover_runs,
    format_diff,
    format_table,
    grid_table,
    load_artifacts,
    load_config,
    run,
    validate_config,
    write_artifacts,
    write_diff_csv,
    write_xlsx,
)
from mgrb.tests.helpers import tiny_config

FIXTURES = Path(__file__).resolve().parent / "fixtures"

ARTIFACT_FILES = (
    "phase_metrics.csv",
    "confusion_phase0.csv",
    "confusion_phase1.csv",
    "confusion_phase2.csv",
    "phase_records.jsonl",
    "summary.json",
    "resolved_config.json",
)


class ConfigTests(SimpleTestCase):
    def test_defaults_fill_every_section(self):
        config = validate_config({"split": {"n": 6, "m": 3}})
        self.assertEqual(config.name, "mgrb")
        self.assertEqual(config.seed, 1993)
        self.assertEqual(config.memory.size, 20)
        self.assertEqual(config.trainer.k, 4)
        self.assertEqual(config.trainer.ratio, 0.9)
        self.assertEqual(config.trainer.weights.beta, 20.0)
        self.assertIsNone(config.trainer.weights.lam)
        self.assertEqual(config.trainer.retrain.learning_rate, 0.01)
        self.assertEqual(config.dataset.synthetic.train_counts, (300, 150, 75))
        self.assertTrue(config.trainer.flags.use_mg)

    def test_resolved_form_validates_back(self):
        config = validate_config(tiny_config())
        self.assertEqual(validate_config(config.to_dict()), config)

    def test_split_is_required(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_config({})
        self.assertIn("split", ctx.exception.errors)

    def test_invalid_sections(self):
        cases = [
            tiny_config(ratio=1.0),
            tiny_config(memory={"mode": "herding"}),
            tiny_config(memory={"mode": "per_class", "size": 1}),
            tiny_config(memory={"mode": "total", "size": 11}),
            tiny_config(flags={"use_mg": True, "hierarchy_mode": "none"}),
            tiny_config(weights={"beta": 0}),
            tiny_config(network={"hidden_sizes": [0]}),
            tiny_config(dataset={"source": "csv"}),
            tiny_config(train={"learning_rate": 0}),
        ]
        for raw in cases:
            with self.assertRaises(ConfigError, msg=raw):
                validate_config(raw)

    def test_overrides(self):
        raw = apply_overrides(tiny_config(), ["weights.beta=2.5", "name=other", "flags.hierarchy_mode=semantic"])
        self.assertEqual(raw["weights"]["beta"], 2.5)
        self.assertEqual(raw["name"], "other")
        config = validate_config(raw)
        self.assertEqual(config.trainer.flags.hierarchy_mode, "semantic")

    def test_override_into_a_value_is_an_error(self):
        with self.assertRaises(ConfigError):
            apply_overrides({"name": "a"}, ["name.x=1"])
        with self.assertRaises(ConfigError):
            apply_overrides({}, ["novalue"])

    def test_load_config_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps(tiny_config()), encoding="utf-8")
            config = load_config(path, ["seed=11"])
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.name, "tiny")

    def test_unreadable_config(self):
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/config.json")


class RunTests(SimpleTestCase):
    def setUp(self):
        self.config = validate_config(tiny_config())

    def test_run_writes_every_artifact(self):
        with tempfile.TemporaryDirectory() as tmp:
            artifacts = run(self.config, tmp)
            for name in ARTIFACT_FILES:
                self.assertTrue((Path(tmp) / name).exists(), name)
            self.assertTrue((Path(tmp) / "checkpoint_phase2.npz").exists())
            records = (Path(tmp) / "phase_records.jsonl").read_text(encoding="utf-8").splitlines()
            metrics = (Path(tmp) / "phase_metrics.csv").read_text(encoding="utf-8").splitlines()
            loaded = load_artifacts(tmp)

        self.assertEqual(len(artifacts.reports), 3)
        self.assertEqual(len(records), 4)
        self.assertIn('"config"', records[0])
        self.assertTrue(metrics[0].startswith("# config: "))
        self.assertEqual(artifacts.columns, ["init", "4", "6"])
        self.assertEqual(len(artifacts.class_names), 6)
        summary = artifacts.summary
        self.assertAlmostEqual(
            summary["average_incremental_accuracy"], sum(artifacts.accuracies) / 3, delta=1e-12
        )
        self.assertEqual(summary["last_accuracy"], artifacts.reports[-1].accuracy)
        self.assertEqual(loaded.accuracies, artifacts.accuracies)
        self.assertEqual(loaded.split, artifacts.split)

    def test_same_config_twice_gives_identical_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            run(self.config, tmp)
            first = {name: (Path(tmp) / name).read_bytes() for name in ARTIFACT_FILES}
            run(self.config, tmp)
            second = {name: (Path(tmp) / name).read_bytes() for name in ARTIFACT_FILES}
        for name in ARTIFACT_FILES:
            self.assertEqual(first[name], second[name], name)

    def test_resumed_run_matches_the_uninterrupted_one(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp)
            run(self.config, out)
            expected = {name: (out / name).read_bytes() for name in ARTIFACT_FILES}
            for name in ("checkpoint_phase2.npz", "memory_phase2.npz", "summary.json"):
                (out / name).unlink()
            resumed = run(self.config, out, resume_from=out)
            actual = {name: (out / name).read_bytes() for name in ARTIFACT_FILES}
        self.assertEqual(len(resumed.reports), 3)
        for name in ARTIFACT_FILES:
            self.assertEqual(actual[name], expected[name], name)

    def test_resume_needs_the_same_config_and_a_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "run"
            run(self.config, out)
            with self.assertRaises(ConfigError):
                run(replace(self.config, seed=8), resume_from=out)
            for phase in range(3):
                (out / f"memory_phase{phase}.npz").unlink()
            with self.assertRaises(InvalidArgument):
                run(self.config, resume_from=out)
            with self.assertRaises(InvalidArgument):
                run(self.config, resume_from=Path(tmp) / "missing")

    def test_other_seed_other_split(self):
        a = run(self.config)
        b = run(replace(self.config, seed=8))
        self.assertNotEqual(a.split["order"], b.split["order"])

    def csv_config(self, schema: Path, **changes):
        dataset = {"source": "csv", "path": str(FIXTURES / "toy.csv"), "schema": str(schema)}
        return validate_config(tiny_config(dataset=dataset, **changes))

    def test_csv_dataset_with_its_ontology(self):
        artifacts = run(self.csv_config(FIXTURES / "toy_schema.json"))
        self.assertEqual(len(artifacts.reports), 2)
        self.assertEqual(sorted(artifacts.class_names), ["alpha", "beta", "delta", "gamma"])
        groups = artifacts.reports[-1].hierarchy_groups
        self.assertEqual(sorted(groups), ["greek_a", "greek_b"])

    def test_smallest_total_memory_runs_every_phase(self):
        config = validate_config(tiny_config(memory={"mode": "total", "size": 12}))
        self.assertEqual(len(run(config).reports), 3)

    def test_total_memory_checked_against_csv_classes(self):
        with self.assertRaises(ConfigError) as ctx:
            run(self.csv_config(FIXTURES / "toy_schema.json", memory={"mode": "total", "size": 7}))
        self.assertIn("memory", ctx.exception.errors)

    def test_ontology_mode_without_an_ontology_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            schema = Path(tmp) / "schema.json"
            schema.write_text(json.dumps({"label": "label", "split": "split"}), encoding="utf-8")
            with self.assertRaises(ConfigError):
                run(self.csv_config(schema))
            # the multi-granularity-free baseline needs no hierarchy
            flags = {"use_mg": False, "hierarchy_mode": "none"}
            self.assertEqual(len(run(self.csv_config(schema, flags=flags)).reports), 2)


class AblationTests(SimpleTestCase):
    def setUp(self):
        self.base = validate_config(tiny_config())

    def test_component_variants(self):
        configs = ablation_configs(self.base, "components", output_root="/tmp/grid")
        self.assertEqual([c.name for c in configs], list(COMPONENT_VARIANTS))
        by_name = {c.name: c.trainer.flags for c in configs}
        self.assertFalse(by_name["baseline"].use_cb)
        self.assertEqual(by_name["baseline"].hierarchy_mode, "none")
        self.assertTrue(by_name["MGRB"].use_mg and by_name["MGRB"].use_decoupling)
        self.assertEqual(by_name["MGRB"].hierarchy_mode, "ontology")
        self.assertEqual(configs[0].output_dir, Path("/tmp/grid/baseline"))

    def test_other_grids(self):
        names = [c.name for c in ablation_configs(self.base, "hierarchy")]
        self.assertEqual(names, ["NMG", "MG-ont", "MG-sem", "MG-vis"])
        clusters = ablation_configs(self.base, "clusters", k_values=[2, 3])
        self.assertEqual([(c.name, c.trainer.k) for c in clusters], [("k2", 2), ("k3", 3)])
        self.assertTrue(all(c.trainer.flags.hierarchy_mode == "visual" for c in clusters))
        no_cls = ablation_configs(self.base, "no-cls")
        self.assertEqual([c.trainer.flags.use_cls for c in no_cls], [True, False])

    def test_unknown_grid(self):
        with self.assertRaises(InvalidArgument):
            ablation_configs(self.base, "table9")
        with self.assertRaises(InvalidArgument):
            ablation_configs(self.base, "clusters", k_values=[0])


class ReportTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        base = validate_config(tiny_config())
        cls.baseline = run(replace(base, name="baseline"))
        cls.mgrb = run(replace(base, name="MGRB"))
        cls.other_split = run(replace(base, name="other", seed=8))

    def test_single_run_table(self):
        text = format_table([self.baseline])
        self.assertTrue(text.startswith("baseline (seed 7, split 2/2)"))
        self.assertIn("Avg", text)

    def test_grid_table(self):
        rows = grid_table([self.baseline, self.mgrb])
        self.assertEqual(rows[0], ["variant", "init", "4", "6", "Avg acc"])
        self.assertEqual([r[0] for r in rows[1:]], ["baseline", "MGRB"])

    def test_identical_runs_diff_to_zero(self):
        diff = diff_runs(self.baseline, self.mgrb)
        self.assertEqual(diff.phase, 2)
        self.assertEqual(len(diff.rows), 6)
        self.assertTrue(all(row.delta == 0.0 for row in diff.rows))
        self.assertIn("phase 2: MGRB - baseline", format_diff(diff))

    def test_diff_needs_the_same_split(self):
        with self.assertRaises(InvalidArgument):
            diff_runs(self.baseline, self.other_split)
        with self.assertRaises(InvalidArgument):
            diff_runs(self.baseline, self.mgrb, phase=5)

    def test_diff_csv_and_workbook(self):
        from openpyxl import load_workbook

        diff = diff_runs(self.baseline, self.mgrb, phase=0)
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = Path(tmp) / "diff.csv"
            write_diff_csv(diff, csv_path)
            lines = csv_path.read_text(encoding="utf-8").splitlines()
            xlsx_path = Path(tmp) / "report.xlsx"
            write_xlsx([self.baseline, self.mgrb], xlsx_path, diff)
            workbook = load_workbook(xlsx_path)
        self.assertTrue(lines[0].startswith("# diff: "))
        self.assertEqual(lines[1], "class_index,class_name,baseline,MGRB,delta")
        self.assertEqual(len(lines), 2 + 2)
        self.assertEqual(workbook.sheetnames, ["accuracy", "difference"])
        self.assertEqual(workbook["accuracy"]["A2"].value, "baseline")

    def test_discover_runs(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            write_artifacts(self.baseline, root / "baseline")
            write_artifacts(self.mgrb, root / "MGRB")
            runs = discover_runs(root)
            single = discover_runs(root / "baseline")
            with self.assertRaises(InvalidArgument):
                discover_runs(root / "missing")
        self.assertEqual([r.name for r in runs], ["MGRB", "baseline"])
        self.assertEqual(single[0].name, "baseline")
