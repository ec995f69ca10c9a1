"""Exception hierarchy shared by all solver components."""


class SolverError(Exception):
    """Base class for every error raised by :mod:`ddlshaped`."""


class MalformedProgram(SolverError):
    pass


class NumericalFailure(SolverError):
    pass


class ModelError(SolverError):
    """The stochastic program itself is inconsistent."""


class NoCell(ModelError):
    pass


class UnsupportedPartition(ModelError):
    pass


class ParseError(ModelError):
    pass


class SchemaViolation(ModelError):
    pass


class InconsistentDimensions(ModelError):
    pass


class UnboundedBound(ModelError):
    pass


class UnboundedRecourse(ModelError):
    pass


class InfeasibleMaster(ModelError):
    pass


class CutError(SolverError):
    pass


class NotViolated(CutError):
    pass


class NonBinaryX(CutError):
    pass


class BadBounds(CutError):
    pass


class MissingY(CutError):
    pass


class ConvexityFlagMissing(CutError):
    pass


class MonotonicityFlagMissing(CutError):
    pass


class TooManyDistributions(SolverError):
    pass


class UnboundedLinearizationBound(ModelError):
    pass


class InfeasibleBatchLevels(ModelError):
    pass
