"""Exception hierarchy shared by all scanpath_forge modules."""


class ScanpathForgeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ScanpathForgeError, ValueError):
    """A domain object violates one of its invariants."""


class EmptyScanpath(ValidationError):
    def __init__(self) -> None:
        super().__init__("scanpath has no fixations")


class OutOfBounds(ValidationError):
    def __init__(self, index: int, x: float, y: float, w: int, h: int) -> None:
        self.index = index
        super().__init__(f"fixation {index} at ({x}, {y}) outside {w}x{h} screen")


class NonFinite(ValidationError):
    def __init__(self, index: int) -> None:
        self.index = index
        super().__init__(f"fixation {index} has a non-finite coordinate")


class TooShort(ValidationError):
    def __init__(self, needed: int, got: int) -> None:
        super().__init__(f"need at least {needed} fixations, got {got}")


class ScreenMismatch(ValidationError):
    pass


class EmptyPool(ValidationError):
    def __init__(self) -> None:
        super().__init__("observer pool is empty")


class FlatMap(ValidationError):
    pass


class NotSquare(ValidationError):
    def __init__(self, n: int) -> None:
        super().__init__(f"prior count {n} is not a perfect square")


class ShapeMismatch(ScanpathForgeError, ValueError):
    pass


class LengthMismatch(ShapeMismatch):
    pass


class BadRatios(ValidationError):
    pass


class ParseError(ScanpathForgeError):
    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {reason}")


class RecordError(ValidationError):
    """A dataset line parsed but failed validation."""

    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class MissingImage(ScanpathForgeError, KeyError):
    pass


class CorruptCheckpoint(ScanpathForgeError):
    def __init__(self, field: str) -> None:
        self.field = field
        super().__init__(f"checkpoint corrupt or missing field: {field}")


class NonFiniteLoss(ScanpathForgeError, FloatingPointError):
    def __init__(self, step: int, dump_path: str | None = None) -> None:
        self.step = step
        self.dump_path = dump_path
        msg = f"non-finite loss at step {step}"
        if dump_path:
            msg += f" (diagnostics: {dump_path})"
        super().__init__(msg)
