"""Exception types shared across the toolkit."""


class ManynodeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(ManynodeError):
    """Malformed input file (CSV, profile, config syntax)."""


class ValidationError(ManynodeError):
    """Structurally valid input violating a domain invariant."""


class ConfigError(ManynodeError):
    """Bad or inconsistent configuration value."""


class CausalityError(ManynodeError):
    """Event scheduled in the simulated past."""


class RunawayError(ManynodeError):
    """Event count exceeded the configured cap."""


class CapacityError(ManynodeError):
    """Requested node count exceeds topology capacity."""


class RouteError(ManynodeError):
    """Unknown endpoint or unroutable pair."""


class ProtocolError(ManynodeError):
    """Mismatched collective invocation order across ranks."""


class DeadlockError(ManynodeError):
    """Simulation drained with unfinished ranks."""


class UsageError(ManynodeError):
    """API misuse (unknown handle, double wait, missing trace)."""


class ProfileError(ManynodeError):
    """Reference to a phase that the timing profile does not define."""
