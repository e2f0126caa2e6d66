from diffprune.errors import DiffPruneError


class TrainingError(DiffPruneError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, step, loss, phase="train"):
        self.step = step
        self.loss = loss
        self.phase = phase
        super().__init__(f"{phase} diverged at step {step}: loss={loss}")


class ConfigError(TrainingError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DatasetError(TrainingError):
    pass
