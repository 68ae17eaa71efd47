"""Exception types raised across the simulator and the analytical model."""


class MacRsvError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MacRsvError):
    """Scenario or experiment configuration is inconsistent."""


class OversizePacket(MacRsvError):
    """A packet needs more data slots than a frame holds."""


class DuplicateSender(MacRsvError):
    """The same node appears twice among simultaneous transmissions."""


class ProtocolViolation(MacRsvError):
    """A node received a message that breaks the handshake contract."""


class DataCollision(MacRsvError):
    """A data slot collided at its intended receiver in a static run."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class DomainError(MacRsvError, ValueError):
    """Arguments fall outside the domain of an analytical formula."""


class TruncationError(MacRsvError):
    """Markov-chain truncation leaks more probability than allowed."""

    def __init__(self, message, truncation_mass=None, n_max=None):
        super().__init__(message)
        self.truncation_mass = truncation_mass
        self.n_max = n_max


class NoConvergence(MacRsvError):
    """Stationary distribution could not be computed to tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
