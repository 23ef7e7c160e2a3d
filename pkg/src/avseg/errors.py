"""Exception hierarchy shared across the package."""


class PipelineError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(PipelineError):
    """Operands have incompatible shapes."""


class DomainError(PipelineError):
    """A value lies outside the numeric domain of an operation."""


class ContractError(PipelineError):
    """An API precondition was violated by the caller."""


class ConfigError(PipelineError):
    """A configuration value is out of range or inconsistent."""


class FormatError(PipelineError):
    """A file does not match the expected layout.

    ``offset`` is the byte offset of the first problem when known,
    so corrupt files can be localised without a hex dump.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(PipelineError):
    """Training aborted; carries the step index where it happened."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
