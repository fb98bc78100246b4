"""Exception types shared across the package."""


class GExpectError(Exception):
    """Base class for package errors."""


class ConfigError(GExpectError):
    """Invalid run configuration (bad key, malformed value, usage error)."""


class NumericalError(GExpectError):
    """Numerical failure: CFL violation, non-finite data, memory guard."""
