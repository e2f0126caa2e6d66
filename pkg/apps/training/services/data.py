from dataclasses import dataclass

import numpy as np

from ..errors import DatasetError

TRAIN = "train"
VALIDATION = "validation"


@dataclass(frozen=True, eq=False)
class TaskSplit:
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return int(self.labels.shape[0])


@dataclass(frozen=True, eq=False)
class TaskDataset:
    name: str
    n_classes: int
    train: TaskSplit
    validation: TaskSplit

    def __post_init__(self):
        for tag, split in ((TRAIN, self.train), (VALIDATION, self.validation)):
            if len(split) == 0:
                raise DatasetError(f"{self.name}: {tag} split is empty")
            if split.inputs.shape[0] != len(split):
                raise DatasetError(f"{self.name}: {tag} inputs and labels differ in length")
            if split.labels.min() < 0 or split.labels.max() >= self.n_classes:
                raise DatasetError(f"{self.name}: {tag} labels outside [0, {self.n_classes})")

    def split(self, tag):
        if tag == TRAIN:
            return self.train
        if tag == VALIDATION:
            return self.validation
        raise DatasetError(f"unknown split: {tag}")


def iter_batches(split, batch_size, rng):
    """Yield (inputs, labels) minibatches in an order drawn from rng."""
    order = rng.permutation(len(split))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield split.inputs[idx], split.labels[idx]
