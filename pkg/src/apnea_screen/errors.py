"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (the class name) and
belongs to one of three families that map onto CLI exit codes.
"""


class ScreenError(Exception):
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


class ConfigError(ScreenError):
    exit_code = 2


class DataError(ScreenError):
    exit_code = 3


class ModelError(ScreenError):
    exit_code = 4


# signal-io
class MissingChannel(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MalformedMeta(DataError):
    pass


class NonFiniteSample(DataError):
    pass


class UnknownLabelToken(DataError):
    pass


class NonMonotonicIndex(DataError):
    pass


class OutOfAnnotatedRange(DataError):
    pass


# preprocess
class RecordTooShort(DataError):
    pass


class SampleRateTooLow(DataError):
    pass


class DegenerateSegment(DataError):
    pass


# features
class NoBeatsDetected(DataError):
    pass


class InsufficientBeats(DataError):
    pass


# classify / rule detector
class SignalTooShort(DataError):
    pass


class ModelMissing(ModelError):
    pass


# ahi
class ZeroSleepTime(DataError):
    pass


# metrics
class LabelOutOfRange(DataError):
    pass


class OneClassOnly(DataError):
    pass


class DegenerateVariance(DataError):
    pass


# nn
class ShapeMismatch(ModelError):
    pass


class DegenerateBatch(ModelError):
    pass


class EmptyDataset(ModelError):
    pass


class WeightsFormatError(ModelError):
    pass


# cli
class NoSubjects(DataError):
    pass


class RunPreprocessFirst(DataError):
    pass


class UnknownConfigKey(ConfigError):
    pass


class BadConfigValue(ConfigError):
    pass
