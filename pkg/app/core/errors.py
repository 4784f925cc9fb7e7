"""
Structured errors raised by the MDCN engine.

Every error carries a short ``kind`` so the CLI can print a single
machine-parsable line (``error: <kind>: <message>``).
"""
from typing import Any, Optional, Sequence


class MDCNError(Exception):
    """Base class for all engine errors"""

    kind = "mdcn"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        return f"{self.kind}: {' '.join(self.message.split())}"


class DimensionError(MDCNError, ValueError):
    """Tensor shapes do not fit together"""

    kind = "dimension"

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            rendered = " vs ".join("x".join(str(d) for d in s) for s in shapes)
            message = f"{message} ({rendered})"
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class UnsupportedFactorError(MDCNError, ValueError):
    kind = "unsupported-factor"


class IncompatibleFactorError(MDCNError, ValueError):
    """Requested factor cannot be served by the checkpoint's tail"""

    kind = "incompatible-factor"

    def __init__(self, factor: int, checkpoint_scale: int, supported: Sequence[int]):
        super().__init__(
            f"factor {factor} is not supported by a checkpoint trained for x{checkpoint_scale} "
            f"(supported: {', '.join(str(f) for f in supported)})"
        )
        self.factor = factor
        self.checkpoint_scale = checkpoint_scale


class UnusableImageError(MDCNError, ValueError):
    kind = "unusable-image"


class DatasetConfigError(MDCNError, ValueError):
    kind = "dataset"


class CheckpointFormatError(MDCNError):
    """Checkpoint bytes are malformed; ``offset`` points at the bad byte"""

    kind = "checkpoint-format"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class NonFiniteGradientError(MDCNError, ArithmeticError):
    kind = "non-finite-gradient"

    def __init__(self, name: str, report: str):
        super().__init__(f"non-finite gradient in '{name}': {report}")
        self.name = name
        self.report = report


class TrainingAbortedError(MDCNError):
    """Training stopped early; ``last_good`` holds the last checkpointed parameters"""

    kind = "training-aborted"

    def __init__(self, message: str, iteration: int, last_good: Any = None,
                 last_good_iteration: Optional[int] = None):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
        self.last_good = last_good
        self.last_good_iteration = last_good_iteration


class ConfigError(MDCNError, ValueError):
    kind = "config"

    def __init__(self, key: str, message: str):
        super().__init__(f"invalid value for '{key}': {message}")
        self.key = key
