"""Exception types raised across the package."""


class LatticeError(Exception):
    """Base class for every error raised by latskg."""


class ConfigError(LatticeError):
    pass


class NumericError(LatticeError):
    """Base for failures of a numerical routine (CLI exit code 3)."""


class SingularBasis(LatticeError):
    pass


class DimensionMismatch(LatticeError):
    pass


class DimensionTooLarge(NumericError):
    pass


class NotNested(LatticeError):
    pass


class IndexTooLarge(NumericError):
    pass


class NonPositiveSigma(LatticeError):
    pass


class NotLatticePoint(LatticeError):
    pass


class MethodUnsupported(LatticeError):
    pass


class NonBracketed(NumericError):
    pass


class InvalidDistribution(LatticeError):
    pass


class QuadratureFailure(NumericError):
    pass


class RankDeficientCode(LatticeError):
    pass


class ConstructionFailed(NumericError):
    pass


class NotDegradable(LatticeError):
    pass


class NotPSD(LatticeError):
    pass


class InvalidPublicMessage(LatticeError):
    pass


class EnumerationTooLarge(NumericError):
    pass


class KeySpaceTooLarge(NumericError):
    pass


class DegenerateChain(UserWarning):
    """Warning: k1 == k3, so the chain carries neither public message nor key."""
