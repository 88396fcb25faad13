"""Exception types; the CLI maps each one to an exit status."""


class PfoptError(Exception):
    exit_code = 1


class ConfigError(PfoptError, ValueError):
    """Invalid run configuration or schema."""

    exit_code = 2


class DataError(PfoptError, ValueError):
    """Unreadable or inconsistent input data."""

    exit_code = 3


class NonConvergenceError(PfoptError, RuntimeError):
    """A solver hit its iteration cap and the caller asked for escalation."""

    exit_code = 4
