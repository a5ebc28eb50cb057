"""Exception hierarchy shared by the simulator and the analysis tools."""

from __future__ import annotations


class BubbleSimError(Exception):
    """Base class for all errors raised by bubblesim."""


class SimulationAborted(BubbleSimError):
    """A step produced a state outside the model's domain.

    ``t`` is the step that failed and ``frame`` holds whatever partial
    information was available when the failure was detected.
    """

    def __init__(self, message: str, t: int | None = None, frame: dict | None = None):
        super().__init__(message)
        self.t = t
        self.frame = frame or {}


class NonPositivePrice(SimulationAborted):
    pass


class NonPositiveWealth(SimulationAborted):
    pass


class ClearingViolation(SimulationAborted):
    pass


class DegenerateCoupling(BubbleSimError):
    """Coupling equals the baseline flip probability; fixed points are undefined."""


class NotSupercritical(BubbleSimError):
    pass


class TooShort(BubbleSimError, ValueError):
    pass


class DegenerateTail(BubbleSimError, ValueError):
    pass


class ZeroVariance(BubbleSimError, ValueError):
    pass


class NoConvexity(BubbleSimError):
    """Log-price is not convex enough over the window for a super-exponential fit."""


class ConfigError(BubbleSimError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError, ValueError):
    """Raised when a parameter violates its bounds. ``key`` names the field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
