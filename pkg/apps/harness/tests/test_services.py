import numpy as np
from django.test import SimpleTestCase, TestCase

from apps.analysis.services import SweepCell, per_layer_sparsity
from apps.codec import services as codec
from apps.codec.errors import SegmentMismatchError
from apps.harness import services
from apps.harness.config import parse_config, resolve
from apps.training.models import TrainingRun
from apps.training.services.pipeline import budget

from .fixtures import TINY, TINY_TRANSFORMER


def _context(text):
    return services.context_for(resolve(parse_config(text)))


class TransformerPipelineTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.ctx = _context(TINY_TRANSFORMER)
        cls.checkpoint = services.pretrain(cls.ctx)

    def test_checkpoint_matches_the_model(self):
        decoded = codec.decode_checkpoint(codec.encode_checkpoint(self.checkpoint))
        self.assertEqual(decoded.space.total_dim, self.ctx.model.space.total_dim)
        self.assertEqual(decoded.metadata["config"]["model"], "transformer")
        self.assertIsNotNone(services.open_checkpoint(decoded))

    def test_structured_diff_on_a_transformer(self):
        ctx = services.context_for(self.ctx.config.with_train(target_sparsity=0.02))
        delta = services.finetune(ctx, self.checkpoint.theta, "structured", "shift")
        self.assertLessEqual(delta.nonhead_nnz, budget(0.02, delta.space.nonhead_dim))
        labels = [label for label, _ in per_layer_sparsity(delta).counts]
        self.assertEqual(labels, ["embed", "layer0", "pooler"])
        accuracy = services.evaluate_diff(ctx, self.checkpoint.theta, delta, "shift")
        self.assertTrue(0.0 <= accuracy <= 1.0)

    def test_checkpoint_for_another_model_is_rejected(self):
        with self.assertRaises(SegmentMismatchError):
            services.open_checkpoint(self.checkpoint, base_config=resolve(parse_config(TINY)).as_dict())


class StatsTests(SimpleTestCase):
    def test_diff_stats(self):
        ctx = _context(TINY)
        theta = ctx.model.init_params(np.random.default_rng(0))
        delta = services.finetune(ctx, theta, "last-layer", "permute")
        stats = services.diff_stats(delta, n_tasks=4)
        self.assertEqual(stats["nnz"], delta.nnz)
        self.assertEqual([e.bytes for e in stats["storage"]], [4 * delta.dim, 8 * delta.nnz])
        self.assertAlmostEqual(stats["efficiency"].total_multiplier, 1 + 4 * delta.nnz / delta.dim)


class SweepCellTests(TestCase):
    def test_recorded_cell(self):
        ctx = _context(TINY)
        theta = ctx.model.init_params(np.random.default_rng(0))
        result = services.recorded_cell(ctx, theta, "permute", SweepCell(0.01, "unstructured", 2))
        self.assertLessEqual(result.nonzero_fraction, 0.01 + 1 / ctx.model.space.nonhead_dim)
        self.assertTrue(0.0 <= result.zero_group_fraction <= 1.0)
        run = TrainingRun.objects.get(kind=TrainingRun.Kind.SWEEP_CELL)
        self.assertEqual((run.method, run.seed, run.status), ("unstructured", 2, TrainingRun.Status.COMPLETED))
        self.assertEqual(run.config["target_sparsity"], 0.01)

    def test_cell_does_not_change_the_context(self):
        ctx = _context(TINY)
        theta = ctx.model.init_params(np.random.default_rng(0))
        services.run_cell(ctx, theta, "permute", SweepCell(0.5, "non-adaptive", 7))
        self.assertEqual(ctx.config.train.target_sparsity, 0.1)
        self.assertEqual(ctx.config.train.seed, 0)
