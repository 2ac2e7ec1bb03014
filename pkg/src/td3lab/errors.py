"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or unknown variant/environment id."""


class ShapeError(ValueError):
    """Array dimensions do not match what the receiver was built for."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition (stale cache, bad index, ...)."""


class PreconditionError(ContractError):
    """Operation invoked on an object that is not ready for it (e.g. empty buffer)."""


class NumericError(FloatingPointError):
    """Non-finite value encountered where a finite one is required."""


class AlignmentError(ValueError):
    """Curves being aggregated do not share an evaluation grid or config hash."""
