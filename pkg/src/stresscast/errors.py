"""Exception hierarchy. ConfigError and CorpusFormatError map to CLI exit code 2
(bad configuration or bad input files); everything else maps to exit code 1."""


class StressCastError(Exception):
    """Base class for all package errors."""


class ConfigError(StressCastError):
    """Invalid configuration, recipe, or artifact (missing file, bad grid, bad plan)."""


class CorpusFormatError(StressCastError):
    """Malformed input data: unparseable rows, duplicate keys, calendar gaps."""


class InsufficientLengthError(StressCastError):
    """A series or slice is too short for the requested operation."""


class EmptyDatasetError(StressCastError):
    """An operation produced or received a dataset with no rows."""


class DataError(StressCastError):
    """Non-finite or otherwise unusable numeric inputs."""


class DegenerateTargetError(StressCastError):
    """Classification targets collapse to a single class."""


class ShapeError(StressCastError):
    """Dimension mismatch between inputs and a fitted model or between vectors."""


class AlignmentError(StressCastError):
    """Key sets that must match do not."""


class InsufficientMinorityError(StressCastError):
    """Too few minority rows to run an oversampler."""


class UndefinedAUCError(StressCastError):
    """AUC requested but only one class is present."""


class PipelineError(StressCastError):
    """Failure inside a pipeline stage; message carries the stage tag."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
