"""Exception types shared across the package.

Each error class carries the process exit code the CLI maps it to.
"""


class MacfnError(Exception):
    exit_code = 1


class ConfigError(MacfnError):
    """Invalid or unparseable configuration (names the offending field)."""

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UsageError(MacfnError):
    """An API was called outside its contract (wrong shapes, terminal step, ...)."""

    exit_code = 2


class DivergedError(MacfnError):
    """A non-finite value appeared in a loss, gradient or model output."""

    exit_code = 3

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CheckpointVersionError(MacfnError):
    exit_code = 4


class OracleError(MacfnError):
    """Quadrature refinement failed to converge, or an oracle check failed."""

    exit_code = 5
