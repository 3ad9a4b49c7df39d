"""Exception hierarchy shared by every stage of the workbench."""


class RecBenchError(Exception):
    """Base class. ``stage`` names the pipeline stage that failed, when known."""

    stage: str | None = None

    def __init__(self, message: str = "", stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class InvalidConfigError(RecBenchError, ValueError):
    pass


class MissingColumnError(RecBenchError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptyInputError(RecBenchError, ValueError):
    pass


class NonFiniteInputError(RecBenchError, ValueError):
    pass


class InvalidDimError(RecBenchError, ValueError):
    pass


class UnknownNodeError(RecBenchError, KeyError):
    pass


class ShapeMismatchError(RecBenchError, ValueError):
    pass


class NonFiniteError(RecBenchError, FloatingPointError):
    pass


class EmptyTrainingSetError(RecBenchError, ValueError):
    pass


class DivergedLossError(RecBenchError, FloatingPointError):
    def __init__(self, epoch: int, message: str = ""):
        super().__init__(message or f"non-finite loss at epoch {epoch}", stage="fit")
        self.epoch = epoch


class KindMismatchError(RecBenchError, TypeError):
    pass


class UnknownItemError(RecBenchError, KeyError):
    pass


class UniverseTooSmallError(RecBenchError, ValueError):
    pass


class EmptyUniverseError(RecBenchError, ValueError):
    pass


class ListTooShortError(RecBenchError, ValueError):
    pass


class NoUsableQueriesError(RecBenchError, ValueError):
    pass


class ReportIOError(RecBenchError, OSError):
    pass
