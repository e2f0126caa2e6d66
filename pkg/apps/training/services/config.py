import dataclasses
from dataclasses import dataclass

from django.conf import settings

from ..errors import ConfigError

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    l0_lambda: float = 1.25e-7
    l: float = -1.5
    r: float = 1.5
    target_sparsity: float = 0.005
    epochs_train: int = 3
    epochs_finetune: int = 1
    learning_rate: float = 0.1
    finetune_learning_rate: float | None = None
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"
    alpha_init: float = 5.0
    group_alpha_init: float = 5.0
    w_init: float = 0.0
    structured: bool = True
    u_eps: float = 1e-6

    def __post_init__(self):
        if not self.l0_lambda >= 0:
            raise ConfigError("lambda", f"must be >= 0, got {self.l0_lambda}")
        if not self.l < 0:
            raise ConfigError("l", f"must be < 0, got {self.l}")
        if not self.r > 1:
            raise ConfigError("r", f"must be > 1, got {self.r}")
        if not 0 < self.target_sparsity <= 1:
            raise ConfigError("target_sparsity", f"must lie in (0, 1], got {self.target_sparsity}")
        if self.epochs_train < 1:
            raise ConfigError("epochs_train", f"must be >= 1, got {self.epochs_train}")
        if self.epochs_finetune < 0:
            raise ConfigError("epochs_finetune", f"must be >= 0, got {self.epochs_finetune}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.finetune_learning_rate is not None and not self.finetune_learning_rate > 0:
            raise ConfigError("finetune_learning_rate", f"must be > 0, got {self.finetune_learning_rate}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("optimizer", f"must be one of {', '.join(OPTIMIZERS)}, got {self.optimizer!r}")
        if not 0 < self.u_eps < 0.5:
            raise ConfigError("u_eps", f"must lie in (0, 0.5), got {self.u_eps}")

    @classmethod
    def from_settings(cls, **overrides):
        """Config whose unspecified values come from the DIFFPRUNE_* settings."""
        values = {
            "l0_lambda": settings.DIFFPRUNE_L0_LAMBDA,
            "l": settings.DIFFPRUNE_STRETCH_L,
            "r": settings.DIFFPRUNE_STRETCH_R,
            "target_sparsity": settings.DIFFPRUNE_TARGET_SPARSITY,
            "alpha_init": settings.DIFFPRUNE_ALPHA_INIT,
            "group_alpha_init": settings.DIFFPRUNE_GROUP_ALPHA_INIT,
            "w_init": settings.DIFFPRUNE_W_INIT,
            "u_eps": settings.DIFFPRUNE_U_EPS,
        }
        values.update(overrides)
        return cls(**values)

    @property
    def mask_learning_rate(self):
        if self.finetune_learning_rate is None:
            return self.learning_rate
        return self.finetune_learning_rate

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        """Run-config keys and values; `l0_lambda` is reported as `lambda`."""
        values = dataclasses.asdict(self)
        values["lambda"] = values.pop("l0_lambda")
        return values
