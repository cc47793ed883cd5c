"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2), data
problems (3) and numeric failures (4).
"""


class MergeEigError(Exception):
    exit_code = 1


class ConfigError(MergeEigError):
    exit_code = 2


class DataError(MergeEigError):
    exit_code = 3


class NumericError(MergeEigError):
    exit_code = 4


# linalg
class NotSymmetric(NumericError):
    pass


class NotPSD(NumericError):
    pass


class ZeroPivot(NotPSD):
    pass


class Singular(NumericError):
    pass


class DimensionMismatch(DataError):
    pass


# mpc
class Overflow(NumericError):
    pass


class ConfigMismatch(ConfigError):
    pass


class TripleReused(NumericError):
    pass


class DomainError(NumericError):
    pass


# models / estimators
class MissingOutcomes(DataError):
    pass


class MissingTrueCate(DataError):
    pass


class EmptyArm(DataError):
    pass


class SamplerFailure(NumericError):
    pass


class NonFiniteLikelihood(NumericError):
    pass


class ConditionalSamplerUnsupported(ConfigError):
    pass


# privacy
class InvalidBound(ConfigError):
    pass


class EmptyUtilities(DataError):
    pass


# data
class ParseError(DataError):
    pass


class SchemaViolation(DataError):
    pass


class NonBinaryTreatment(SchemaViolation):
    pass


class InsufficientRows(DataError):
    pass


class InfeasibleConstraints(DataError):
    pass


# ranking
class LengthMismatch(DataError):
    pass


class BadK(ConfigError):
    pass


class SingularCovariance(NumericError):
    pass
