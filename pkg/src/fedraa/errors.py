"""Exception hierarchy shared across the package."""


class FedRAAError(Exception):
    """Base class for all package errors."""


class ConfigError(FedRAAError, ValueError):
    """Invalid or inconsistent configuration value."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key is not None and key not in message:
            message = f"{key}: {message}"
        super().__init__(message)


class InfeasiblePartitionError(ConfigError):
    """A fragment would own no units."""


class InfeasibleError(FedRAAError):
    """No fragment satisfies the delay bound for some client."""


class NumericError(FedRAAError, ArithmeticError):
    """A non-finite value appeared during training or evaluation."""


class ContractError(FedRAAError):
    """Caller violated an operation's preconditions."""


class ParseError(FedRAAError, ValueError):
    """Malformed IDX payload."""

    def __init__(self, message: str, offset: int, path=None):
        self.offset = offset
        self.path = path
        where = f" in {path}" if path is not None else ""
        super().__init__(f"{message} at byte offset {offset}{where}")


class GuardError(FedRAAError):
    """Instance too large for exhaustive enumeration."""
