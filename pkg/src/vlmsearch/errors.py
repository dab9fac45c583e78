"""Exception hierarchy shared across the package."""


class SearchError(Exception):
    """Base class for every error raised by vlmsearch."""

    category = "error"


class InputError(SearchError, ValueError):
    category = "input"


class DimensionError(InputError):
    category = "dimension"


class DegenerateInputError(InputError):
    """Raised when a representation has no variance to compare."""

    category = "degenerate"


class EstimatorError(InputError):
    category = "estimator"


class UnknownIdError(SearchError, KeyError):
    category = "lookup"

    def __str__(self):
        return Exception.__str__(self)


class DegenerateFitError(SearchError, ValueError):
    category = "fit"


class SpecError(SearchError, ValueError):
    category = "spec"


class ConfigError(SearchError, ValueError):
    category = "config"


class TraceError(SearchError):
    """Trace bundle could not be read or does not cover the requested grid."""

    category = "trace"


class UnsupportedRatioError(SearchError, ValueError):
    category = "ratio"


class OracleError(SearchError):
    """Evaluation backend failed. ``payload`` holds the raw response, if any."""

    category = "oracle"

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class ProtocolError(OracleError):
    category = "protocol"
