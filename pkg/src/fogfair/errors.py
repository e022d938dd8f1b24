"""Exception hierarchy shared across the package."""


class FogFairError(Exception):
    """Base class for all errors raised by fogfair."""


class DataError(FogFairError):
    """Input data violates a format or content invariant."""


class MissingMetadata(DataError):
    def __init__(self, subject_id):
        super().__init__(f"no metadata row for subject {subject_id!r}")
        self.subject_id = subject_id


class MalformedRow(DataError):
    def __init__(self, file, line, reason=""):
        msg = f"{file}:{line}: malformed row"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.file = str(file)
        self.line = line
        self.reason = reason


class NonMonotonicTimestamps(DataError):
    def __init__(self, file, line=None):
        where = f"{file}:{line}" if line is not None else str(file)
        super().__init__(f"{where}: time_s is not strictly increasing")
        self.file = str(file)
        self.line = line


class MissingSamples(DataError):
    """A recording has a gap in its sample grid; gaps are not imputed."""

    def __init__(self, file, line):
        super().__init__(f"{file}:{line}: gap in sample timestamps")
        self.file = str(file)
        self.line = line


class UpsampleRequested(FogFairError):
    pass


class ChannelMismatch(FogFairError):
    pass


class NoCompatiblePlacement(FogFairError):
    pass


class RecordingTooShort(FogFairError):
    pass


class SignalTooShort(FogFairError):
    pass


class BandOutOfRange(FogFairError):
    pass


class WindowTooShort(FogFairError):
    pass


class SingleClassTraining(FogFairError):
    pass


class DimensionMismatch(FogFairError):
    pass


class DivergedLoss(FogFairError):
    pass


class ShapeIncompatible(FogFairError):
    pass


class EmptyGroup(FogFairError):
    pass


class AllIdenticalValues(FogFairError):
    pass


class NoEpisodes(FogFairError):
    pass


class UnsupportedMetric(FogFairError):
    """Metric is undefined for the attribute (e.g. false-positive parity on FOG phenotype)."""


class UnknownGroupMember(FogFairError):
    pass


class MissingGroupLabels(FogFairError):
    pass


class InfeasibleCoverage(FogFairError):
    pass


class LengthMismatch(FogFairError):
    pass


class TooFewSamples(FogFairError):
    pass


class ConfigError(FogFairError):
    pass
