"""Exception hierarchy shared by every PRVNet module."""

from __future__ import annotations

from typing import Optional, Sequence


class PrvnetError(Exception):
    """Base class for all errors raised by the toolkit."""


class DimensionError(PrvnetError, ValueError):
    def __init__(self, message: str, *shapes: Sequence[int]) -> None:
        if shapes:
            rendered = " vs ".join(str(tuple(shape)) for shape in shapes)
            message = f"{message}: {rendered}"
        super().__init__(message)
        self.shapes = tuple(tuple(shape) for shape in shapes)


class ConfigurationError(PrvnetError, ValueError):
    pass


class ContractError(PrvnetError, RuntimeError):
    pass


class TrainingDivergedError(PrvnetError, RuntimeError):
    """Raised when the training objective stops being finite."""

    def __init__(self, epoch: int, batch: int, value: Optional[float] = None) -> None:
        super().__init__(f"Non-finite loss ({value}) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class ArtifactError(PrvnetError, OSError):
    """Dataset or checkpoint file that cannot be decoded."""
