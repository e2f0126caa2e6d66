from diffprune.errors import DiffPruneError


class DiffError(DiffPruneError):
    pass


class SpaceError(DiffError):
    pass


class DimensionMismatchError(DiffError):
    def __init__(self, expected, actual, what="vector"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} has dimension {actual}, expected {expected}")


class GroupingError(DiffError):
    pass


class InvalidDiffError(DiffError):
    pass
