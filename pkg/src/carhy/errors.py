"""Exception hierarchy for carhy."""

from __future__ import annotations


class CarhyError(ValueError):
    """Base class for all carhy errors."""


# design / fitting
class InvalidTime(CarhyError):
    pass


class DegenerateDesign(CarhyError):
    pass


class DimensionMismatch(CarhyError):
    pass


class SingularNormalEquations(DegenerateDesign):
    pass


# moments
class InvalidOrder(CarhyError):
    pass


class NonpositiveVariance(CarhyError):
    pass


# Satterthwaite engine
class InvalidConditionCount(CarhyError):
    pass


class SingularOmega(CarhyError):
    pass


class MomentMismatch(CarhyError):
    pass


# hypothesis tests
class InsufficientReplication(CarhyError):
    pass


class NonpositiveTau(CarhyError):
    pass


class ZeroAmplitude(CarhyError):
    pass


# ingestion
class InputValidationError(CarhyError):
    """Raised for malformed expression or metadata inputs."""


class MissingSample(InputValidationError):
    pass


class DuplicateGene(InputValidationError):
    pass


class UnitsMismatch(InputValidationError):
    pass
