"""
Synthetic sequence-classification tasks sharing one token space.

Each class owns a token distribution drawn once per suite. The base task
samples sequences from those distributions; the derived tasks relabel the
classes, keep only half of them, shift the token statistics, or merge
classes under extra noise. Everything is generated from the suite seed.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from apps.training.errors import DatasetError
from apps.training.services.data import TaskDataset, TaskSplit

logger = logging.getLogger(__name__)

BASE = "base"
PERMUTE = "permute"
SHIFT = "shift"
SUBSET = "subset"
MIXED = "mixed"
DERIVED_TASKS = (PERMUTE, SHIFT, SUBSET, MIXED)
TASKS = (BASE,) + DERIVED_TASKS

# Concentration of the per-class token distributions; smaller is peakier.
CLASS_CONCENTRATION = 0.3
MIXED_NOISE = 0.3


@dataclass(frozen=True)
class SuiteSpec:
    suite_seed: int = 0
    vocab_size: int = 16
    max_len: int = 8
    n_classes: int = 8
    n_train: int = 512
    n_val: int = 256


@dataclass(eq=False)
class TaskSuite:
    spec: SuiteSpec
    class_tokens: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def names(self):
        return TASKS

    @property
    def base(self):
        return self.task(BASE)

    @property
    def derived(self):
        return {name: self.task(name) for name in DERIVED_TASKS}

    def task(self, name):
        if name not in TASKS:
            raise DatasetError(f"unknown task {name!r}; expected one of {', '.join(TASKS)}")
        if name not in self._cache:
            self._cache[name] = _generate(self, name)
        return self._cache[name]


def build_suite(spec):
    rng = np.random.default_rng([spec.suite_seed, 0])
    class_tokens = rng.dirichlet(np.full(spec.vocab_size, CLASS_CONCENTRATION), size=spec.n_classes)
    return TaskSuite(spec, class_tokens)


def _sample(rng, distributions, classes, max_len):
    vocab = distributions.shape[1]
    tokens = np.empty((classes.size, max_len), dtype=np.int64)
    for i, c in enumerate(classes):
        tokens[i] = rng.choice(vocab, size=max_len, p=distributions[c])
    return tokens


def _generate(suite, name):
    spec = suite.spec
    task_id = TASKS.index(name) + 1
    rng = np.random.default_rng([spec.suite_seed, task_id])
    distributions = suite.class_tokens
    pool = np.arange(spec.n_classes)
    relabel = np.arange(spec.n_classes)

    if name == PERMUTE:
        relabel = rng.permutation(spec.n_classes)
    elif name == SHIFT:
        distributions = np.roll(distributions, 1, axis=1)
    elif name == SUBSET:
        pool = pool[: max(2, spec.n_classes // 2)]
    elif name == MIXED:
        uniform = np.full_like(distributions, 1.0 / spec.vocab_size)
        distributions = (1 - MIXED_NOISE) * distributions + MIXED_NOISE * uniform
        relabel = relabel // 2

    def split(n):
        classes = rng.choice(pool, size=n)
        tokens = _sample(rng, distributions, classes, spec.max_len)
        return TaskSplit(tokens, relabel[classes].astype(np.int64))

    dataset = TaskDataset(name=name, n_classes=spec.n_classes, train=split(spec.n_train), validation=split(spec.n_val))
    logger.debug("generated task %s: %d train, %d validation", name, spec.n_train, spec.n_val)
    return dataset


def majority_baseline(split):
    """Accuracy of always predicting the most frequent label."""
    return float(np.bincount(split.labels).max() / len(split))
