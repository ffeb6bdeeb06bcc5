"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` (and subclasses) -> 2,
``NumericDivergenceError`` -> 3.
"""


class EdmError(Exception):
    pass


class ShapeError(EdmError, ValueError):
    pass


class DataError(EdmError):
    pass


class FormatError(DataError):
    pass


class UnsupportedError(FormatError):
    pass


class CorruptionError(FormatError):
    pass


class ModelStateError(EdmError, RuntimeError):
    pass


class NumericDivergenceError(EdmError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

    @classmethod
    def at(cls, epoch, batch, loss):
        return cls(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}", epoch, batch)
