import csv
import json
import math
import shutil
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from openpyxl import load_workbook

from apps.analysis import services as analysis
from apps.analysis.errors import AnalysisError, SweepCellError
from apps.diffs.services import DiffVector, compose, default_grouping
from apps.diffs.space import FlatParamSpace
from apps.training.errors import DivergenceError
from apps.training.services.pipeline import evaluate_accuracy, run_method
from apps.training.tests import toy


def _space():
    return FlatParamSpace.from_shapes([
        ("embed.weight", (2, 2), 0, False),
        ("block1.weight", (2, 2), 1, False),
        ("block1.bias", (2,), 1, False),
        ("block2.weight", (2, 2), 2, False),
        ("classifier.weight", (2, 2), 3, True),
    ])


class PerLayerSparsityTests(SimpleTestCase):
    def test_fractions_of_total(self):
        delta = DiffVector(_space(), [4, 5, 8, 10], [1.0, 2.0, 3.0, 4.0])
        report = analysis.per_layer_sparsity(delta, target=0.2)
        self.assertEqual(report.total_nonzero, 4)
        self.assertEqual(report.per_layer, [("embed", 0.0), ("block1", 0.75), ("block2", 0.25)])
        self.assertEqual(report.target, 0.2)

    def test_single_layer(self):
        report = analysis.per_layer_sparsity(DiffVector(_space(), [0, 3], [1.0, 1.0]))
        self.assertEqual(report.fraction("embed"), 1.0)
        self.assertEqual(report.fraction("block1"), 0.0)
        self.assertEqual(report.fraction("block2"), 0.0)

    def test_heads_are_not_counted(self):
        report = analysis.per_layer_sparsity(DiffVector(_space(), [0, 14, 15], [1.0, 1.0, 1.0]))
        self.assertEqual(report.total_nonzero, 1)
        self.assertNotIn("classifier", [label for label, _ in report.counts])

    def test_empty_delta(self):
        report = analysis.per_layer_sparsity(DiffVector.empty(_space()))
        self.assertEqual(report.total_nonzero, 0)
        self.assertEqual(report.per_layer, [])

    def test_fractions_sum_to_one_and_ignore_values(self):
        space = _space()
        for seed in range(50):
            rng = np.random.default_rng(seed)
            dense = rng.normal(size=space.total_dim)
            dense[rng.random(space.total_dim) < 0.5] = 0
            dense[0] = 1.0
            report = analysis.per_layer_sparsity(DiffVector.from_dense(dense, space))
            self.assertAlmostEqual(sum(f for _, f in report.per_layer), 1.0, delta=1e-9)

            rescaled = np.where(dense != 0, rng.permutation(dense) + 100.0, 0)
            again = analysis.per_layer_sparsity(DiffVector.from_dense(rescaled, space))
            self.assertEqual(again.per_layer, report.per_layer)

    def test_rows(self):
        report = analysis.per_layer_sparsity(DiffVector(_space(), [4, 5, 8, 10], [1.0, 2.0, 3.0, 4.0]))
        self.assertEqual(report.rows()[1], {"layer": "block1", "nonzero": 3, "fraction": 0.75})


class ZeroGroupFractionTests(SimpleTestCase):
    def test_half_of_the_groups_untouched(self):
        delta = DiffVector(FlatParamSpace.flat(4), [2], [1.0])
        self.assertEqual(analysis.zero_group_fraction(delta, [[0, 1], [2, 3]]), 0.5)

    def test_empty_delta(self):
        delta = DiffVector.empty(_space())
        self.assertEqual(analysis.zero_group_fraction(delta, default_grouping(_space())), 1.0)

    def test_matches_brute_force(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            dim = int(rng.integers(2, 40))
            cuts = np.sort(rng.choice(np.arange(1, dim), size=min(dim - 1, int(rng.integers(1, 6))), replace=False))
            groups = [list(g) for g in np.split(np.arange(dim), cuts)]
            support = sorted(set(rng.integers(0, dim, size=int(rng.integers(0, dim))).tolist()))
            delta = DiffVector(FlatParamSpace.flat(dim), support, np.ones(len(support)))
            touched = sum(1 for g in groups if set(g) & set(support))
            self.assertAlmostEqual(analysis.zero_group_fraction(delta, groups), 1 - touched / len(groups))

    def test_no_groups(self):
        with self.assertRaises(AnalysisError):
            analysis.zero_group_fraction(DiffVector.empty(_space()), [])


class StorageCostTests(SimpleTestCase):
    def test_sparse_diff_of_a_large_model(self):
        estimate = analysis.storage_cost(340e6, 1.7e6, analysis.POSITIONS_AND_WEIGHTS)
        self.assertEqual(estimate.bytes, 13_600_000)
        self.assertIsInstance(estimate.bytes, int)
        self.assertEqual(f"{estimate.megabytes:.1f}", "13.6")

    def test_full_weights(self):
        estimate = analysis.storage_cost(340e6, 1.7e6, analysis.FULL_WEIGHTS)
        self.assertEqual(estimate.bytes, 1_360_000_000)
        self.assertEqual(f"{estimate.megabytes:.1f}", "1360.0")
        self.assertEqual(f"{estimate.mebibytes:.1f}", "1297.0")

    def test_empty_diff(self):
        self.assertEqual(analysis.storage_cost(1000, 0).bytes, 0)

    def test_assumptions(self):
        estimate = analysis.storage_cost(10, 2)
        self.assertEqual(estimate.assumptions, {"bytes_per_weight": 4, "bytes_per_position": 4})
        self.assertIn("16 bytes", estimate.describe())

    def test_rejections(self):
        for args in [(10, 11), (10.5, 1), (-1, 0), (10, 1, "zip")]:
            with self.assertRaises(AnalysisError, msg=args):
                analysis.storage_cost(*args)


class EfficiencyAndConsistencyTests(SimpleTestCase):
    def test_natural_sparsity(self):
        delta = DiffVector(_space(), [0, 4, 14], [1.0, 1.0, 1.0])
        self.assertEqual(analysis.natural_sparsity(delta), 2 / 14)

    def test_parameter_efficiency(self):
        result = analysis.parameter_efficiency(1000, 5, 9)
        self.assertEqual(result.new_per_task, 0.005)
        self.assertAlmostEqual(result.total_multiplier, 1.045)

    def test_identical_reports_correlate_perfectly(self):
        report = analysis.per_layer_sparsity(DiffVector(_space(), [0, 4, 5, 6, 8, 9], np.ones(6)))
        self.assertAlmostEqual(analysis.layer_consistency(report, report), 1.0)

    def test_reversed_ranking(self):
        a = analysis.per_layer_sparsity(DiffVector(_space(), [0, 4, 5, 10, 11, 12], np.ones(6)))
        b = analysis.per_layer_sparsity(DiffVector(_space(), [0, 1, 2, 4, 5, 10], np.ones(6)))
        self.assertAlmostEqual(analysis.layer_consistency(a, b), -1.0)

    def test_constant_report(self):
        a = analysis.per_layer_sparsity(DiffVector(_space(), [0, 4, 10], np.ones(3)))
        b = analysis.per_layer_sparsity(DiffVector(_space(), [0, 4, 5, 8], np.ones(4)))
        self.assertTrue(math.isnan(analysis.layer_consistency(a, b)))


def _fake_cell(cell):
    accuracy = {"structured": 0.9, "unstructured": 0.8, "non-adaptive": 0.7}[cell.method]
    return analysis.CellResult(accuracy + cell.seed / 100, cell.t, None, 1.0)


class SparsitySweepTests(SimpleTestCase):
    def test_row_count_and_order(self):
        methods = ["structured", "unstructured", "non-adaptive"]
        rows = analysis.sparsity_sweep(_fake_cell, [0.001, 0.0025, 0.005, 0.01], methods, seeds=[0, 1, 2])
        self.assertEqual(len(rows), 4 * 3)
        self.assertEqual([(r.t, r.method) for r in rows[:3]], [(0.001, m) for m in methods])
        self.assertEqual(rows[0].seeds, 3)

    def test_median_over_seeds(self):
        rows = analysis.sparsity_sweep(_fake_cell, [0.5], ["structured"], seeds=[0, 5, 1])
        self.assertAlmostEqual(rows[0].accuracy, 0.91)
        self.assertEqual(rows[0].accuracies, tuple(0.9 + s / 100 for s in (0, 5, 1)))
        self.assertIsNone(rows[0].zero_group_fraction)
        self.assertNotIn("accuracies", rows[0].as_dict())

    def test_failures_carry_the_cell(self):
        def failing(cell):
            if cell.method == "unstructured":
                raise DivergenceError(3, float("nan"))
            return _fake_cell(cell)

        with self.assertRaises(SweepCellError) as ctx:
            analysis.sparsity_sweep(failing, [0.01], ["structured", "unstructured"], seeds=[4])
        self.assertEqual((ctx.exception.t, ctx.exception.method, ctx.exception.seed), (0.01, "unstructured", 4))
        self.assertIsInstance(ctx.exception.cause, DivergenceError)

    def test_sparsity_range(self):
        for t in (0.0, 1.5):
            with self.assertRaises(AnalysisError):
                analysis.sparsity_sweep(_fake_cell, [t], ["structured"])

    def test_custom_runner_must_return_every_cell(self):
        with self.assertRaises(AnalysisError):
            analysis.sparsity_sweep(_fake_cell, [0.1], ["structured"], runner=lambda fn, cells: [])

    def test_projection_ablation(self):
        rows = [
            analysis.SweepRow(0.01, "structured", 0.9, 0.01, 0.5, 1, 1.0),
            analysis.SweepRow(0.01, "structured-no-projection", 0.92, 0.3, 0.1, 1, 1.0),
            analysis.SweepRow(0.01, "structured-no-finetune", 0.85, 0.01, 0.5, 1, 1.0),
        ]
        self.assertEqual(analysis.projection_ablation(rows), [{
            "t": 0.01,
            "structured": 0.9,
            "without_projection": 0.92,
            "without_finetune": 0.85,
            "natural_sparsity": 0.3,
        }])

    def test_nonadaptive_at_full_density_reproduces_full_finetuning(self):
        model = toy.BlobModel()
        theta = toy.pretrained(0)
        data = toy.blobs(0, label_map=(2, 0, 1))

        def run_cell(cell):
            cfg = toy.config(target_sparsity=cell.t, seed=cell.seed, epochs_finetune=0)
            delta = run_method(cell.method, model, theta, data, cfg)
            accuracy = evaluate_accuracy(model, compose(theta, delta), data.validation)
            return analysis.CellResult(accuracy, delta.nonzero_fraction)

        rows = analysis.sparsity_sweep(run_cell, [1.0], ["non-adaptive", "full"])
        self.assertEqual(rows[0].accuracy, rows[1].accuracy)


class ExportTests(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp)
        self.rows = analysis.sparsity_sweep(_fake_cell, [0.001, 0.01], ["structured", "unstructured"])

    def test_csv_with_config_sidecar(self):
        path = analysis.write_csv(self.tmp / "sweep.csv", analysis.SWEEP_COLUMNS, self.rows, {"seed": 0})
        with path.open(encoding="utf-8", newline="") as fh:
            lines = list(csv.reader(fh))
        self.assertEqual(lines[0], list(analysis.SWEEP_COLUMNS))
        self.assertEqual(len(lines), 1 + 4)
        self.assertEqual(lines[1][:2], ["0.001", "structured"])
        sidecar = self.tmp / "sweep.csv.config.json"
        self.assertEqual(json.loads(sidecar.read_text(encoding="utf-8")), {"seed": 0})

    def test_xlsx_one_sheet_per_table(self):
        report = analysis.per_layer_sparsity(DiffVector(_space(), [4, 5, 8], np.ones(3)))
        path = analysis.write_xlsx(self.tmp / "out.xlsx", [
            ("sweep", analysis.SWEEP_COLUMNS, self.rows),
            ("layers", analysis.LAYER_COLUMNS, report.rows()),
        ])
        wb = load_workbook(path)
        self.assertEqual(wb.sheetnames, ["sweep", "layers"])
        sheet = wb["sweep"]
        self.assertEqual([c.value for c in sheet[1]], list(analysis.SWEEP_COLUMNS))
        self.assertTrue(sheet["A1"].font.bold)
        self.assertEqual(sheet.max_row, 5)
        self.assertEqual(wb["layers"]["A3"].value, "block1")
