"""Exception types shared across the package."""


class GridError(ValueError):
    """Raised when a raster input violates its contract (shape, range, NaN)."""


class HandAbsentError(RuntimeError):
    """Raised when an operation needs a hand whose mask is empty."""


class PipelineStageError(RuntimeError):
    """Raised when a pipeline stage fails; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
