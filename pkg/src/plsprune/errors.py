"""Exception hierarchy shared across the package."""


class PlsPruneError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PlsPruneError, ValueError):
    pass


class InsufficientDataError(PlsPruneError, ValueError):
    pass


class DataError(PlsPruneError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class ParameterError(PlsPruneError, ValueError):
    pass


class DegenerateModelError(PlsPruneError):
    pass


class DivergenceError(PlsPruneError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ParseError(PlsPruneError, ValueError):
    """Malformed file. ``offset`` is a byte offset, ``line``/``column`` are 1-based."""

    def __init__(self, message, offset=None, line=None, column=None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line
        self.column = column


class FormatError(ParseError):
    pass


class ConsistencyError(PlsPruneError, ValueError):
    pass


class IntegrityError(PlsPruneError, ValueError):
    pass


class UnsupportedVersionError(PlsPruneError, ValueError):
    pass


class RepresentationError(PlsPruneError):
    pass


class CriterionError(PlsPruneError):
    pass


class IndexMismatchError(PlsPruneError, ValueError):
    pass


class SurgeryError(PlsPruneError):
    pass


class PipelineError(PlsPruneError):
    """A pipeline stage failed; ``report`` holds the records completed so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
