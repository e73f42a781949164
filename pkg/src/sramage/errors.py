"""Exception hierarchy shared across the toolkit."""


class SramageError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(SramageError, ValueError):
    pass


class UndefinedMetricError(SramageError, ArithmeticError):
    """A metric has no defined value for the given input (e.g. constant truth)."""


class ConvergenceError(SramageError, RuntimeError):
    pass


class SchemaMismatchError(SramageError, ValueError):
    pass


class ManifestError(SramageError, ValueError):
    """Malformed manifest document."""


class MissingDumpError(SramageError, FileNotFoundError):
    pass


class DumpSizeError(SramageError, ValueError):
    pass


class DuplicateDeviceError(SramageError, ValueError):
    pass
