"""Exception hierarchy shared across simfuse modules."""


class SimfuseError(Exception):
    """Base class for all simfuse errors."""


# cohort ingestion / model
class CohortError(SimfuseError, ValueError):
    pass


class MissingColumn(CohortError):
    pass


class NonBinaryLabel(CohortError):
    pass


class NonMonotoneTimestamps(CohortError):
    pass


class DuplicatePatientId(CohortError):
    pass


class CohortTooSmall(CohortError):
    pass


class InvalidParameter(SimfuseError, ValueError):
    pass


# transforms
class TransformError(SimfuseError, ValueError):
    pass


class NoPositiveEvents(TransformError):
    pass


class NoNegativeEvents(TransformError):
    pass


class DegenerateFeature(TransformError):
    pass


# clustering
class ClusterError(SimfuseError, ValueError):
    pass


class EmptyInput(ClusterError):
    pass


class EigendecompositionFailure(ClusterError):
    pass


class UnknownPatient(ClusterError, KeyError):
    pass


# dtw
class DtwError(SimfuseError, ValueError):
    pass


class EmptySeries(DtwError):
    pass


class InfeasibleBand(DtwError):
    pass


class SeriesTooLong(DtwError):
    pass


# distributed engine
class EngineError(SimfuseError):
    pass


class EmptyJob(EngineError, ValueError):
    pass


class NoWorkersAvailable(EngineError):
    pass


class JobIncomplete(EngineError):
    pass


class FingerprintMismatch(EngineError):
    pass


# fusion / eval
class UnknownTarget(SimfuseError, KeyError):
    pass


class LengthMismatch(SimfuseError, ValueError):
    pass


class SingleClassInput(SimfuseError, ValueError):
    pass


class MalformedPredictions(SimfuseError, ValueError):
    pass


class PipelineError(SimfuseError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
