from diffprune.errors import DiffPruneError


class AnalysisError(DiffPruneError):
    pass


class SweepCellError(AnalysisError):
    """A sweep cell failed; carries the cell's t, method and seed."""

    def __init__(self, t, method, seed, cause):
        self.t = t
        self.method = method
        self.seed = seed
        self.cause = cause
        super().__init__(f"sweep cell t={t} method={method} seed={seed}: {cause}")
