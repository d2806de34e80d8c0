"""
HMHF Errors
Typed failures raised by the numerical modules and mapped to CLI exit codes
"""


class HMHFError(Exception):
    """Base class for every failure raised by hmhf_control."""

    exit_code = 2


class ValidationError(HMHFError):
    """Inputs or configuration do not satisfy a documented precondition."""

    exit_code = 1


class SizeMismatch(ValidationError):
    """Array length does not match the grid size."""


class SouthPoleSingularity(HMHFError):
    """A state touches the pole the stereographic chart projects from."""


class UnresolvableWinding(HMHFError):
    """Adjacent angle samples jump by half a turn or more."""


class DegenerateMode(HMHFError):
    """No dominant Fourier mode to fit a harmonic-map chart to."""


class SingularGram(HMHFError):
    """Windowed Gram matrix of the retained modes is numerically singular."""


class BlowupDetected(HMHFError):
    """The time stepper left the range where its results can be trusted."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class Timeout(HMHFError):
    """A time budget ran out before the requested event happened."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class IllConditioned(HMHFError):
    """Regularized least-squares system exceeds the condition limit."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ScheduleExhausted(HMHFError):
    """A null-control stage was entered above its admissible norm."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class CrossingFailed(HMHFError):
    """The crossing control did not bring the energy below the harmonic level."""

    def __init__(self, message, delta_e=None):
        super().__init__(message)
        self.delta_e = delta_e


class DegreeMismatch(ValidationError):
    """Winding of the initial angle differs from the requested target winding."""


class DimensionTooSmall(ValidationError):
    """The construction needs a sphere of dimension k >= 2."""


class PoleOnCurve(HMHFError):
    """Every candidate projection pole is too close to one of the curves."""


class EnergyUnreachable(HMHFError):
    """A seeded state cannot reach the requested energy with the given modes."""


class StageFailure(HMHFError):
    """A pipeline stage failed; carries the phase log recorded so far."""

    def __init__(self, message, phase_log=None, cause=None):
        super().__init__(message)
        self.phase_log = phase_log
        self.cause = cause
