"""Exception and warning types raised across the toolkit."""

from __future__ import annotations


class PkmMotionError(Exception):
    """Base class for every error raised by :mod:`pkm_motion`."""

    stage: str | None = None


def tag_stage(exc: PkmMotionError, stage: str) -> PkmMotionError:
    """Record the pipeline stage on an error and prefix its message."""
    if getattr(exc, "stage", None) is None:
        exc.stage = stage
        if exc.args:
            exc.args = (f"[{stage}] {exc.args[0]}",) + exc.args[1:]
    return exc


# geometry / splines
class DuplicateConsecutiveWaypoint(PkmMotionError):
    pass


class TooFewWaypoints(PkmMotionError):
    pass


class ParamOutOfRange(PkmMotionError):
    pass


class OrderTooHigh(PkmMotionError):
    pass


class SingularCollocationMatrix(PkmMotionError):
    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class QuadratureDepthExceeded(PkmMotionError):
    pass


# arc-length reparameterization
class SingularParameterization(PkmMotionError):
    pass


class RankDeficientKKT(PkmMotionError):
    pass


class ArcLengthOutOfRange(PkmMotionError):
    pass


# orientation
class NotARotation(PkmMotionError):
    pass


class AntipodalAmbiguity(PkmMotionError):
    pass


class HemisphereCrossing(PkmMotionError):
    pass


# optimization
class InfeasibleMonotonicity(PkmMotionError):
    pass


class NonPositiveDuration(PkmMotionError):
    pass


class InconsistentSpec(PkmMotionError):
    pass


class SingularRuu(PkmMotionError):
    def __init__(self, message: str, segment: int | None = None):
        if segment is not None:
            message = f"{message} (segment {segment})"
        super().__init__(message)
        self.segment = segment


class InfeasibleLimits(PkmMotionError):
    pass


# kinematics
class Unreachable(PkmMotionError):
    def __init__(self, message: str, limb: int | None = None):
        super().__init__(message)
        self.limb = limb


class BranchSingularity(Unreachable):
    pass


class NoConvergence(PkmMotionError):
    pass


# pipeline / runtime
class InvalidPath(PkmMotionError):
    pass


class TimeOutOfRange(PkmMotionError):
    pass


class LengthMismatch(PkmMotionError):
    pass


# files and configuration
class ParseError(PkmMotionError):
    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigError(PkmMotionError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)
        self.detail = message
        self.field = field
        self.line = line


class IoError(PkmMotionError):
    pass


# non-fatal conditions
class PkmMotionWarning(UserWarning):
    pass


class IllConditionedWarning(PkmMotionWarning):
    pass


class GimbalProximityWarning(PkmMotionWarning):
    pass


class SingularJacobian(PkmMotionWarning):
    pass


class UnreachableTolerance(PkmMotionWarning):
    pass


class SolverStall(PkmMotionWarning):
    pass


class ParamOverrun(PkmMotionWarning):
    pass
