"""Exception hierarchy.

Every error carries the CLI exit code of its family so the command line layer
can map failures without inspecting messages.
"""


class TakeoverEffectsError(Exception):
    exit_code = 1


class ConfigError(TakeoverEffectsError):
    exit_code = 2


class DataError(TakeoverEffectsError):
    exit_code = 3


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    pass


class DeflatorLookupError(DataError):
    pass


class CoverageError(DataError):
    pass


class ClassificationError(DataError):
    pass


class EstimationError(TakeoverEffectsError):
    exit_code = 4


class RankError(EstimationError):
    pass


class PreconditionError(EstimationError):
    pass


class ConvergenceError(EstimationError):
    def __init__(self, message, best_objective=None, trace=None):
        super().__init__(message)
        self.best_objective = best_objective
        self.trace = list(trace) if trace is not None else []


class SeparationError(EstimationError):
    def __init__(self, message, covariate=None):
        super().__init__(message)
        self.covariate = covariate


class AggregationError(EstimationError):
    pass
