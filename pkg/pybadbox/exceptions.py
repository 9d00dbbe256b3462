class BadBoxError(Exception):
    """Base class for every error raised by pybadbox."""


class DatasetParseError(BadBoxError, ValueError):
    """An annotations or results file is not valid JSON (or not UTF-8)."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message if byte_offset is None else f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class DatasetValidationError(BadBoxError, ValueError):
    """The structure parsed but breaks a dataset invariant."""

    def __init__(self, message: str, offending_ids: list | None = None):
        self.offending_ids = sorted(offending_ids or [])
        if self.offending_ids:
            message = f"{message}: {self.offending_ids}"
        super().__init__(message)


class TriggerError(BadBoxError, ValueError):
    pass


class PoisoningError(BadBoxError, RuntimeError):

    def __init__(self, message: str, missing_files: list[str] | None = None):
        self.missing_files = sorted(missing_files or [])
        if self.missing_files:
            message = f"{message}: {', '.join(self.missing_files)}"
        super().__init__(message)


class EvaluationError(BadBoxError, ValueError):
    pass


class TrainingError(BadBoxError, RuntimeError):
    pass


class StudyError(BadBoxError, RuntimeError):
    """A stage of the desk-scale study failed. The stage name is kept on .stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"Study stage '{stage}' failed: {cause}")
        self.stage = stage
