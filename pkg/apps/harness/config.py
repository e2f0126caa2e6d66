"""
Run configuration files.

A run config is a flat `key=value` text file; `#` starts a comment line.
Values are cast through an `environ.Env` schema whose lookup mapping is the
parsed file, so the casting rules match those of the process settings.
Unspecified keys fall back to the DIFFPRUNE_* settings and the toy-suite
defaults below.
"""

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import environ

from apps.training.errors import ConfigError
from apps.training.services.config import TrainConfig
from apps.training.services.pipeline import METHODS

from .suite import PERMUTE, TASKS, SuiteSpec
from .toymodels import ARCHITECTURES, MLP

logger = logging.getLogger(__name__)

TRAIN_KEYS = {
    "lambda": "l0_lambda",
    "l": "l",
    "r": "r",
    "target_sparsity": "target_sparsity",
    "epochs_train": "epochs_train",
    "epochs_finetune": "epochs_finetune",
    "learning_rate": "learning_rate",
    "finetune_learning_rate": "finetune_learning_rate",
    "batch_size": "batch_size",
    "seed": "seed",
    "optimizer": "optimizer",
    "alpha_init": "alpha_init",
    "group_alpha_init": "group_alpha_init",
    "w_init": "w_init",
    "structured": "structured",
    "u_eps": "u_eps",
}
MODEL_KEYS = ("model", "depth", "width", "layers", "heads", "d_model")
SUITE_KEYS = ("suite_seed", "vocab_size", "max_len", "n_classes", "n_train", "n_val")
SWEEP_KEYS = ("tasks", "methods", "sparsities", "seeds")
PRETRAIN_KEYS = ("epochs_pretrain", "pretrain_learning_rate")

# Keys that fix the parameter space and the data; a checkpoint pins them.
STRUCTURE_KEYS = MODEL_KEYS + SUITE_KEYS

_BOOL_STRINGS = {s.lower() for s in environ.Env.BOOLEAN_TRUE_STRINGS} | {"false", "f", "no", "n", "off", "0"}


@dataclass(frozen=True)
class ModelSpec:
    model: str = MLP
    vocab_size: int = 16
    n_classes: int = 8
    max_len: int = 8
    depth: int = 2
    width: int = 32
    layers: int = 1
    heads: int = 2
    d_model: int = 16


@dataclass(frozen=True)
class SweepSpec:
    tasks: tuple = (PERMUTE,)
    methods: tuple = ("structured", "unstructured", "non-adaptive")
    sparsities: tuple = (0.001, 0.0025, 0.005, 0.01)
    seeds: tuple = (0, 1, 2)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    model: ModelSpec
    suite: SuiteSpec
    sweep: SweepSpec
    epochs_pretrain: int = 10
    pretrain_learning_rate: float = 0.1

    def with_train(self, **changes):
        return dataclasses.replace(self, train=self.train.replace(**changes))

    def pretrain_config(self):
        return self.train.replace(
            epochs_train=self.epochs_pretrain,
            learning_rate=self.pretrain_learning_rate,
        )

    def as_dict(self):
        """Every recognized key with its resolved value, JSON-ready."""
        values = self.train.as_dict()
        for key in MODEL_KEYS:
            values[key] = getattr(self.model, key)
        for key in SUITE_KEYS:
            values[key] = getattr(self.suite, key)
        for key in SWEEP_KEYS:
            values[key] = list(getattr(self.sweep, key))
        values["epochs_pretrain"] = self.epochs_pretrain
        values["pretrain_learning_rate"] = self.pretrain_learning_rate
        return dict(sorted(values.items()))


def _schema():
    train = TrainConfig.from_settings()
    model, suite, sweep = ModelSpec(), SuiteSpec(), SweepSpec()
    schema = {
        "lambda": (float, train.l0_lambda),
        "l": (float, train.l),
        "r": (float, train.r),
        "target_sparsity": (float, train.target_sparsity),
        "epochs_train": (int, train.epochs_train),
        "epochs_finetune": (int, train.epochs_finetune),
        "learning_rate": (float, train.learning_rate),
        "finetune_learning_rate": (float, None),
        "batch_size": (int, train.batch_size),
        "seed": (int, train.seed),
        "optimizer": (str, train.optimizer),
        "alpha_init": (float, train.alpha_init),
        "group_alpha_init": (float, train.group_alpha_init),
        "w_init": (float, train.w_init),
        "structured": (bool, train.structured),
        "u_eps": (float, train.u_eps),
        "tasks": ([str], list(sweep.tasks)),
        "methods": ([str], list(sweep.methods)),
        "sparsities": ([float], list(sweep.sparsities)),
        "seeds": ([int], list(sweep.seeds)),
        "epochs_pretrain": (int, RunConfig.epochs_pretrain),
        "pretrain_learning_rate": (float, RunConfig.pretrain_learning_rate),
    }
    for key in MODEL_KEYS:
        value = getattr(model, key)
        schema[key] = (type(value), value)
    for key in SUITE_KEYS:
        value = getattr(suite, key)
        schema[key] = (type(value), value)
    return schema


KNOWN_KEYS = frozenset(TRAIN_KEYS) | frozenset(STRUCTURE_KEYS) | frozenset(SWEEP_KEYS) | frozenset(PRETRAIN_KEYS)


def parse_config(text):
    """Raw `key -> string` mapping of a config file's lines."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", f"line {lineno} is not key=value")
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
        if key in raw:
            raise ConfigError(key, f"set twice (line {lineno})")
        raw[key] = value.strip()
    return raw


def cast_values(raw):
    """Typed values for the keys present in `raw`."""
    schema = _schema()
    env = environ.Env(**{key: schema[key] for key in raw})
    env.ENVIRON = raw
    values = {}
    for key, text in raw.items():
        cast = schema[key][0]
        if cast is bool and text.lower() not in _BOOL_STRINGS:
            raise ConfigError(key, f"expected a boolean, got {text!r}")
        try:
            value = env(key)
        except (ValueError, TypeError) as exc:
            raise ConfigError(key, f"cannot parse {text!r}: {exc}") from None
        if isinstance(value, list):
            value = [v.strip() if isinstance(v, str) else v for v in value]
        values[key] = value
    return values


def _check_positive(values, keys):
    for key in keys:
        if values[key] < 1:
            raise ConfigError(key, f"must be >= 1, got {values[key]}")


def build_run_config(values):
    """RunConfig from a complete typed mapping; raises ConfigError naming the bad key."""
    if values["model"] not in ARCHITECTURES:
        raise ConfigError("model", f"must be one of {', '.join(ARCHITECTURES)}, got {values['model']!r}")
    _check_positive(values, ("depth", "width", "layers", "heads", "d_model", "max_len",
                             "n_train", "n_val", "epochs_pretrain"))
    if values["vocab_size"] < 2:
        raise ConfigError("vocab_size", f"must be >= 2, got {values['vocab_size']}")
    if values["n_classes"] < 2:
        raise ConfigError("n_classes", f"must be >= 2, got {values['n_classes']}")
    if values["d_model"] % values["heads"]:
        raise ConfigError("heads", f"{values['heads']} heads do not divide d_model={values['d_model']}")
    if not values["pretrain_learning_rate"] > 0:
        raise ConfigError("pretrain_learning_rate", f"must be > 0, got {values['pretrain_learning_rate']}")
    for task in values["tasks"]:
        if task not in TASKS:
            raise ConfigError("tasks", f"unknown task {task!r}")
    for method in values["methods"]:
        if method not in METHODS:
            raise ConfigError("methods", f"unknown method {method!r}")
    for t in values["sparsities"]:
        if not 0 < t <= 1:
            raise ConfigError("sparsities", f"{t} is outside (0, 1]")
    for key in ("tasks", "methods", "sparsities", "seeds"):
        if not values[key]:
            raise ConfigError(key, "must not be empty")

    train = TrainConfig(**{field: values[key] for key, field in TRAIN_KEYS.items()})
    return RunConfig(
        train=train,
        model=ModelSpec(**{key: values[key] for key in ModelSpec.__dataclass_fields__}),
        suite=SuiteSpec(**{key: values[key] for key in SuiteSpec.__dataclass_fields__}),
        sweep=SweepSpec(**{key: tuple(values[key]) for key in SWEEP_KEYS}),
        epochs_pretrain=values["epochs_pretrain"],
        pretrain_learning_rate=values["pretrain_learning_rate"],
    )


def resolve(raw=None, *, base=None, overrides=None):
    """Defaults, then a checkpoint's resolved config, then file values, then overrides.

    A file may not change the structure keys pinned by `base`.
    """
    values = {key: default for key, (_, default) in _schema().items()}
    if base:
        unknown = set(base) - KNOWN_KEYS
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key in base checkpoint config")
        values.update(base)
    parsed = cast_values(raw or {})
    if base:
        for key in STRUCTURE_KEYS:
            if key in parsed and parsed[key] != base.get(key, parsed[key]):
                raise ConfigError(key, f"{parsed[key]!r} conflicts with the base checkpoint's {base[key]!r}")
    values.update(parsed)
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
        if value is not None:
            values[key] = value
    return build_run_config(values)


def config_load(path=None, *, base=None, overrides=None):
    """Resolve a config file (or nothing) into a RunConfig."""
    raw = {}
    if path is not None:
        raw = parse_config(Path(path).read_text(encoding="utf-8"))
        logger.debug("loaded %d keys from %s", len(raw), path)
    return resolve(raw, base=base, overrides=overrides)
