"""Exception hierarchy shared by the library and the command line."""


class CvtError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CvtError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        listed = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class GeometryError(CvtError):
    def __init__(self, axis, size, kernel, stride, padding):
        self.axis = axis
        super().__init__(
            f"axis {axis}: input extent {size} is too small for "
            f"kernel {kernel}, stride {stride}, padding {padding}"
        )


class ContractError(CvtError):
    pass


class ConfigError(CvtError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NonFiniteError(CvtError):
    pass


class TrainingDivergedError(CvtError):
    def __init__(self, step, loss):
        self.step = step
        super().__init__(f"loss became {loss} at step {step}")


class LabelIndexError(CvtError, IndexError):
    pass


class CheckpointError(CvtError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointConfigMismatchError(CheckpointError):
    pass
