"""Exception hierarchy shared by every trafficmae module."""


class TrafficMAEError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(TrafficMAEError, ValueError):
    pass


class ArgumentError(TrafficMAEError, ValueError):
    pass


class VocabularyError(TrafficMAEError, IndexError):
    pass


class ConfigError(TrafficMAEError, ValueError):
    pass


class StateError(TrafficMAEError, RuntimeError):
    pass


class CorpusError(TrafficMAEError, ValueError):
    pass


class DataError(TrafficMAEError, ValueError):
    """Input data is missing, malformed or inconsistent."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    pass


class ContainerError(TrafficMAEError):
    pass


class VersionError(ContainerError):
    pass


class CorruptionError(ContainerError):
    pass
