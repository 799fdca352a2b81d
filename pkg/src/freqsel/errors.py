"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``FreqselError`` subclasses (bad input,
bad configuration) exit 1, ``OSError`` exits 2, ``CheckFailure`` exits 3.
"""


class FreqselError(Exception):
    pass


class ShapeError(FreqselError, ValueError):
    pass


class DomainError(FreqselError, ValueError):
    pass


class StateError(FreqselError, RuntimeError):
    pass


class ConfigError(FreqselError, ValueError):
    pass


class InsufficientDataError(FreqselError, ValueError):
    pass


class ParseError(FreqselError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(FreqselError, ValueError):
    pass


class CorruptionError(FreqselError, ValueError):
    pass


class TrainingError(FreqselError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")


class CheckFailure(FreqselError, AssertionError):
    pass
