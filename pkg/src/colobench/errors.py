"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ColobenchError(Exception):
    """Base class for every error raised by colobench."""


class ConfigError(ColobenchError, ValueError):
    """A configuration document could not be turned into a model object."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class ConfigSyntaxError(ConfigError):
    """Malformed document. ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class SchemaError(ConfigError):
    """Well-formed document whose content violates the model schema."""


class FormatError(ColobenchError, ValueError):
    """A scalar (e.g. a duration literal) does not match its grammar."""


# workload catalog
class UnknownWorkload(ColobenchError, KeyError):
    def __str__(self) -> str:
        return f"unknown workload: {self.args[0]!r}"


class ParameterError(ColobenchError, ValueError):
    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PlacementError(ColobenchError, ValueError):
    pass


class MetricParseError(ColobenchError, ValueError):
    pass


# bootstrap
class TransportError(ColobenchError):
    pass


# connectors
class ConnectorError(ColobenchError):
    pass


class DuplicateDeployment(ConnectorError):
    pass


class UnknownHandle(ConnectorError, KeyError):
    pass


# monitoring
class ScrapeError(ColobenchError):
    pass


class UnknownKey(ColobenchError, KeyError):
    pass


class ProbeError(ColobenchError):
    pass


# analysis
class AnalysisError(ColobenchError, ValueError):
    pass


class EmptySeries(AnalysisError):
    pass


class ZeroThroughput(AnalysisError):
    pass


class InsufficientData(AnalysisError):
    pass


class MissingMetric(AnalysisError):
    pass
