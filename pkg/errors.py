"""Exception hierarchy for the laboratory.

Every error carries a human readable ``detail`` string, the same contract the
CLI relies on when it reports a failure.
"""
from typing import Optional


class WillmoreLabError(Exception):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# geometry-core
class DegenerateMetric(WillmoreLabError):
    pass


class NotConformal(WillmoreLabError):
    pass


class QuadratureUnderResolved(WillmoreLabError):
    pass


# model-surfaces
class InvalidParameters(WillmoreLabError):
    pass


class ICCenterMisclassified(WillmoreLabError):
    pass


class OutOfRange(WillmoreLabError):
    pass


class NonConvergence(WillmoreLabError):
    pass


class AmbiguousOrder(WillmoreLabError):
    pass


class ZeroOrder(WillmoreLabError):
    pass


# moebius
class PoleHit(WillmoreLabError):
    pass


class CenterOnSurface(WillmoreLabError):
    pass


# varifold
class NonConvergent(WillmoreLabError):
    pass


# bubble-graph
class CycleDetected(WillmoreLabError):
    pass


class Mismatch(WillmoreLabError):
    pass


class NotDoubleTree(WillmoreLabError):
    def __init__(self, clause: str, detail: str):
        super().__init__(f"{clause}: {detail}")
        self.clause = clause


class NoIsomorphism(WillmoreLabError):
    pass


class InconsistentBehavior(WillmoreLabError):
    pass


# synthesizer / detector
class OverlapCollision(WillmoreLabError):
    pass


class Unresolved(WillmoreLabError):
    pass


class InconsistentAcrossK(WillmoreLabError):
    pass


# harness
class StageFailed(WillmoreLabError):
    def __init__(self, stage: str, error: Exception, detail: Optional[str] = None):
        message = detail or getattr(error, "detail", None) or str(error)
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.error = error
