"""Error hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI uses for it: 1 for usage and
configuration problems, 2 for data problems, 3 for numerical failures.
"""


class BGDepthError(Exception):
    exit_code = 1


class UsageError(BGDepthError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(BGDepthError):
    exit_code = 2


class NetpbmError(DataError):
    pass


class MalformedHeaderError(NetpbmError):
    pass


class TruncatedPayloadError(NetpbmError):
    pass


class UnsupportedMagicError(NetpbmError):
    pass


class DepthScaleError(DataError):
    pass


class ImageValueError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class UnwritablePathError(DataError):
    pass


class GridFormatError(DataError):
    pass


class DatasetError(DataError):
    pass


class OrphanedFileError(DatasetError):
    pass


class CheckpointError(DataError):
    pass


class UnknownCheckpointVersionError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class NumericalError(BGDepthError):
    exit_code = 3


class ShapeError(NumericalError):
    pass


class TapeError(NumericalError):
    pass


class DegenerateBatchError(NumericalError):
    pass


class GradientCheckError(NumericalError):
    pass


class NonFiniteLossError(NumericalError):
    def __init__(self, step, loss):
        super().__init__(f"Non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class InvalidGroundTruthError(DataError):
    pass
