"""Exception types shared across the toolkit."""


class DualdecError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(DualdecError, ValueError):
    """Operands have inconsistent dimensions."""


class ParameterError(DualdecError, ValueError):
    """A configuration or argument value is invalid or out of range."""


class GenerationError(DualdecError, RuntimeError):
    """Synthetic-network generation failed after bounded retries."""


class ParseError(DualdecError, ValueError):
    """A data file could not be parsed; carries the path and line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class TrainingError(DualdecError, RuntimeError):
    """Training aborted; ``term`` names the offending loss term or parameter."""

    def __init__(self, term: str, message: str = ""):
        super().__init__(message or f"non-finite or diverging loss term: {term}")
        self.term = term


class CheckpointError(DualdecError, ValueError):
    """A checkpoint file is malformed or inconsistent with the model shapes."""
