"""Exception types raised across the package."""


class LoyaltyLabError(Exception):
    """Base class for all package errors."""


class MalformedInstance(LoyaltyLabError, ValueError):
    pass


class DegenerateChain(LoyaltyLabError, ValueError):
    """A purchase probability of zero makes the points chain reducible."""


class PeriodicChain(LoyaltyLabError, ValueError):
    pass


class IterationCap(LoyaltyLabError, RuntimeError):
    pass


class ZeroRevenue(LoyaltyLabError, ZeroDivisionError):
    pass


class NonIntegralPartition(LoyaltyLabError, ValueError):
    pass


class ProbabilityAtBoundary(LoyaltyLabError, ValueError):
    def __init__(self, tau, prob):
        super().__init__(f"model probability {prob!r} at tau={tau} is outside (0, 1)")
        self.tau = tau
        self.prob = prob


class Degenerate(LoyaltyLabError, ValueError):
    """Design matrix is rank deficient (a single distinct tau)."""


class InvalidDelta(LoyaltyLabError, ValueError):
    pass


class HorizonTooShort(LoyaltyLabError, ValueError):
    pass


class OutOfRange(LoyaltyLabError, ValueError):
    pass
