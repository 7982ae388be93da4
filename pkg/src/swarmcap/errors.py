"""Exception types raised across the toolkit."""


class SwarmError(Exception):
    """Base class for all toolkit errors."""


class InvalidParams(SwarmError, ValueError):
    pass


class InvalidTransition(SwarmError, ValueError):
    """A block was offered to a peer that already holds it."""


class EnumerationLimitExceeded(SwarmError):
    """The requested state space is larger than the configured cap."""

    def __init__(self, n_states, cap):
        super().__init__(f"state space has {n_states} states, cap is {cap}")
        self.n_states = n_states
        self.cap = cap


class NotConverged(SwarmError):
    """An iterative method exhausted its budget."""


class ReducibleChain(SwarmError):
    """The chain has more than one closed communicating class."""


class DegenerateRates(SwarmError, ValueError):
    """A rate that must be positive (typically the end-game rate) is zero."""


class Unstable(SwarmError):
    """A birth-death queue has no stationary distribution."""


class AxisMismatch(SwarmError, ValueError):
    """Two experiments cannot be joined on a common sweep axis."""


class SpecError(SwarmError, ValueError):
    """An experiment description is malformed.

    ``field`` names the offending key (or command-line flag) and ``line``
    its line in the config file when known.
    """

    def __init__(self, message, field=None, line=None):
        where = ""
        if field is not None:
            where = f"{field}: " if line is None else f"line {line}, {field}: "
        super().__init__(where + message)
        self.field = field
        self.line = line
