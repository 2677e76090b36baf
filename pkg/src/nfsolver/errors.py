"""Package-wide exception types.

Every raised error carries a single-line human-readable message; the CLI
relays these verbatim with a nonzero exit status.
"""


class NfsError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(NfsError):
    """An argument violated an operation's documented precondition."""


class NumericError(NfsError):
    """A numeric guard fired (division by zero, overflow guard, non-finite)."""


class FormatError(NfsError):
    """A file or directory did not parse as the expected on-disk format."""


class ConvergenceError(NfsError):
    """An iterative solver or simulation failed to converge or diverged."""


class ConfigError(NfsError):
    """A configuration file or CLI flag set is invalid."""
