"""Exception hierarchy.

Errors fall into three families that the CLI maps to exit codes:
``DataError`` (bad or missing inputs on disk, exit 2), ``NumericError``
(non-finite training state, exit 3) and plain ``ValueError`` subclasses for
contract violations by in-memory callers.
"""


class DepthGazeError(Exception):
    """Base class for all package errors."""


class DataError(DepthGazeError):
    """Input data is missing, malformed or inconsistent."""


class NumericError(DepthGazeError):
    """A computation produced non-finite values."""


# dataset_io
class MissingFrame(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class CorruptFile(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OutOfRange(DataError, ValueError):
    pass


class SplitIncomplete(DataError):
    pass


class CountMismatch(DataError):
    pass


# fixation processing / evaluation
class EmptyFixationSet(DepthGazeError, ValueError):
    pass


class TooFewViewers(DepthGazeError, ValueError):
    pass


class NoScorableFrames(DataError):
    pass


class NoFixations(DepthGazeError, ValueError):
    pass


class MissingPredictions(DataError):
    pass


class ShapeMismatch(DepthGazeError, ValueError):
    pass


# candidates / transitions
class DegenerateMap(DepthGazeError, ValueError):
    pass


class MissingGroundTruth(DataError):
    pass


class SingleClass(DepthGazeError, ValueError):
    pass


class NonFiniteFeature(NumericError, ValueError):
    pass


class EmptySourceSet(DepthGazeError, ValueError):
    pass


class EmptyDestinationSet(DepthGazeError, ValueError):
    pass


# tensor core / network
class OddDimension(ShapeMismatch):
    pass


class GraphNotRecorded(DepthGazeError, RuntimeError):
    pass


class EmptyTrainingSet(DataError):
    pass


class GroundTruthMissing(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass


# configuration
class ConfigError(DataError):
    pass
