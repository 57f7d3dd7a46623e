"""Exception hierarchy shared by all modules."""


class VStabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(VStabError):
    """Inconsistent configuration (delays, dimensions, schema)."""


class ComparisonClassError(VStabError):
    """A comparison function failed its sampled class certification."""


class NoBracket(VStabError):
    """Inversion target lies outside the certified range."""


class KindMismatch(VStabError):
    """Composition of comparison functions with no defined class."""


class NonMonotoneTimes(VStabError):
    """Decay-time table is not strictly increasing."""


class OutOfDomain(VStabError):
    """Evaluation point outside [-theta, 0]."""


class OutOfSpan(VStabError):
    """Requested window is not covered by the computed trajectory."""


class BadStep(VStabError):
    """Pseudotrajectory step outside (0, theta)."""


class DelayMismatch(VStabError):
    """History delay does not match the functional's delay."""


class DivergentIntegrand(VStabError):
    """Scaling integrand blew up because the rate vanished."""


class ConstructionFailed(VStabError):
    """Counterexample construction could not satisfy its conditions."""


class FitFailure(VStabError):
    """Empirical fit impossible on the recorded data."""


class DomainError(VStabError):
    """Argument outside the admissible domain of a formula."""
