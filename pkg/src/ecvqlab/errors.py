"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An operation received tensors whose shapes do not conform."""


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite.

    Attributes:
        iteration: the step at which the divergence was detected.
    """

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient contained NaN or infinity."""

    def __init__(self, param_name):
        super().__init__(f"non-finite gradient for parameter {param_name!r}")
        self.param_name = param_name


class CorruptStreamError(ValueError):
    """A bitstream failed structural validation (magic, length, payload)."""
