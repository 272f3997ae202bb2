from __future__ import annotations


class RwreError(RuntimeError):
    """Base class for every error raised by the toolkit."""


class SpecValidationError(RwreError):
    pass


class NotCalibratedError(RwreError):
    pass


class EllipticityRequiredError(RwreError):
    pass


class LatticeRefusedError(RwreError):
    pass


class RadiusExceededError(RwreError):
    pass


class ConvergenceError(RwreError):
    pass


class NodeCapExceededError(RwreError):
    pass


class SubtreeNotGrownError(RwreError):
    pass


class NotAncestorError(RwreError):
    pass


class OverlappingExtentsError(RwreError):
    pass


class ReturnIndexError(RwreError):
    pass


class EnumerationTooLargeError(RwreError):
    pass


class UnboundedFunctionalError(RwreError):
    pass


class RegimeViolationError(RwreError):
    pass


class InfeasiblePlanError(RwreError):
    def __init__(self, message: str, plan: object | None = None) -> None:
        super().__init__(message)
        self.plan = plan
