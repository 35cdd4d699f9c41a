"""Exception hierarchy shared by every module.

The CLI maps each family onto an exit code, so new errors should subclass
one of the three families rather than ``SceneShapeError`` directly.
"""


class SceneShapeError(Exception):
    exit_code = 1


class ConfigError(SceneShapeError):
    exit_code = 2


class DataError(SceneShapeError):
    exit_code = 3


class NumericalError(SceneShapeError):
    exit_code = 4


class ShapeMismatchError(DataError, ValueError):
    pass


class ParameterError(ConfigError, ValueError):
    pass


class DegenerateFitError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class DegenerateNormalizationError(NumericalError):
    pass


class InsufficientStructureError(NumericalError):
    pass


class GenerationError(NumericalError):
    pass


class EmptyOverlapError(DataError):
    pass


class AlignmentError(NumericalError):
    pass


class UnsupportedCombinationError(ConfigError):
    pass


class DepthFormatError(DataError):
    """Malformed depth/PLY file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
