"""Exception hierarchy shared across the pipeline.

The CLI maps ValidationError (and subclasses) to exit code 1 and
transport-level failures (ThrottledError, TransportError, OSError) to
exit code 2.
"""


class CoiError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(CoiError):
    """Bad data, bad configuration, or a violated precondition."""


class ParseError(ValidationError):
    """Malformed file content; messages name the offending line where known."""


class GatewayError(CoiError):
    """Base class for LLM gateway failures."""


class ConfigurationError(GatewayError):
    """Provider misconfiguration (e.g. missing API key). Never retried."""


class TransportError(GatewayError):
    """Network-level failure or timeout; retried up to the attempt limit."""


class ThrottledError(GatewayError):
    """Provider rate limit; retried up to the attempt limit."""
