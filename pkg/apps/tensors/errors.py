from diffprune.errors import DiffPruneError


class TensorError(DiffPruneError):
    pass


class TensorShapeError(TensorError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NonFiniteError(TensorError):
    def __init__(self, op):
        self.op = op
        super().__init__(f"{op}: non-finite value (NaN or Inf)")


class OpArgumentError(TensorError):
    pass


class LabelRangeError(TensorError):
    def __init__(self, label, n_classes):
        self.label = label
        self.n_classes = n_classes
        super().__init__(f"label {label} outside [0, {n_classes})")


class GradientError(TensorError):
    pass
