from django.test import SimpleTestCase, override_settings

from apps.harness import config as cfgmod
from apps.harness.config import KNOWN_KEYS, config_load, parse_config, resolve
from apps.training.errors import ConfigError

from .fixtures import TINY, TempDirMixin


class ConfigLoadTests(TempDirMixin, SimpleTestCase):
    def test_empty_config_takes_defaults(self):
        run = resolve({})
        self.assertEqual(run.train.l, -1.5)
        self.assertEqual(run.train.r, 1.5)
        self.assertEqual(run.train.l0_lambda, 1.25e-7)
        self.assertEqual(run.train.alpha_init, 5.0)
        self.assertEqual(run.train.w_init, 0.0)
        self.assertEqual(run.model.model, "mlp")
        self.assertEqual(run.sweep.sparsities, (0.001, 0.0025, 0.005, 0.01))

    @override_settings(DIFFPRUNE_L0_LAMBDA=2e-6, DIFFPRUNE_STRETCH_L=-0.5)
    def test_defaults_follow_settings(self):
        run = config_load()
        self.assertEqual(run.train.l0_lambda, 2e-6)
        self.assertEqual(run.train.l, -0.5)

    def test_file_values_are_cast(self):
        run = config_load(self.write_config(self.make_tmp()))
        self.assertEqual(run.model.width, 16)
        self.assertEqual(run.train.optimizer, "adam")
        self.assertEqual(run.train.learning_rate, 0.05)
        self.assertEqual(run.sweep.methods, ("structured", "unstructured"))
        self.assertEqual(run.sweep.seeds, (0,))
        self.assertEqual(run.suite.n_classes, 4)

    def test_lists_tolerate_spaces(self):
        run = resolve(parse_config("tasks = permute, shift\nsparsities = 0.01, 0.02"))
        self.assertEqual(run.sweep.tasks, ("permute", "shift"))
        self.assertEqual(run.sweep.sparsities, (0.01, 0.02))

    def test_booleans(self):
        self.assertFalse(resolve(parse_config("structured=false")).train.structured)
        self.assertTrue(resolve(parse_config("structured=yes")).train.structured)
        with self.assertRaises(ConfigError) as ctx:
            resolve(parse_config("structured=maybe"))
        self.assertEqual(ctx.exception.key, "structured")

    def test_negative_lambda_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve(parse_config("lambda=-1"))
        self.assertEqual(ctx.exception.key, "lambda")

    def test_errors_name_the_key(self):
        cases = {
            "bogus=1": "bogus",
            "width=wide": "width",
            "model=rnn": "model",
            "heads=3\nd_model=16": "heads",
            "methods=structured,magic": "methods",
            "tasks=glue": "tasks",
            "sparsities=0.5,2": "sparsities",
            "target_sparsity=0": "target_sparsity",
            "r=0.5": "r",
            "optimizer=lbfgs": "optimizer",
            "depth=0": "depth",
        }
        for text, key in cases.items():
            with self.assertRaises(ConfigError, msg=text) as ctx:
                resolve(parse_config(text))
            self.assertEqual(ctx.exception.key, key, text)

    def test_syntax_errors(self):
        with self.assertRaises(ConfigError):
            parse_config("width 16")
        with self.assertRaises(ConfigError) as ctx:
            parse_config("seed=1\nseed=2")
        self.assertEqual(ctx.exception.key, "seed")

    def test_comments_and_blank_lines(self):
        self.assertEqual(parse_config("# note\n\n  seed = 4  \n"), {"seed": "4"})

    def test_resolved_config_lists_every_key(self):
        resolved = config_load(self.write_config(self.make_tmp())).as_dict()
        self.assertEqual(set(resolved), KNOWN_KEYS)
        self.assertEqual(resolved["lambda"], 1.25e-7)
        self.assertEqual(resolved["methods"], ["structured", "unstructured"])

    def test_resolved_config_round_trips(self):
        run = config_load(self.write_config(self.make_tmp()))
        self.assertEqual(resolve(base=run.as_dict()), run)

    def test_overrides_win_and_none_is_ignored(self):
        run = resolve(parse_config("seed=3"), overrides={"seed": 9, "lambda": None})
        self.assertEqual(run.train.seed, 9)
        self.assertEqual(run.train.l0_lambda, 1.25e-7)

    def test_file_may_not_change_a_checkpoint_structure(self):
        base = resolve(parse_config(TINY)).as_dict()
        with self.assertRaises(ConfigError) as ctx:
            resolve(parse_config("width=64"), base=base)
        self.assertEqual(ctx.exception.key, "width")
        self.assertEqual(resolve(parse_config("width=16\nseed=5"), base=base).train.seed, 5)

    def test_structure_keys_are_known(self):
        self.assertTrue(set(cfgmod.STRUCTURE_KEYS) <= KNOWN_KEYS)
