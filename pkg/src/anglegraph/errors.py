"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto
its documented process status without a lookup table.
"""


class AngleGraphError(Exception):
    exit_code = 3


class UsageError(AngleGraphError):
    exit_code = 1


class DataError(AngleGraphError):
    exit_code = 2


class NumericError(AngleGraphError):
    exit_code = 3


# pointcloud_io
class FileUnreadable(DataError):
    pass


class FileUnwritable(DataError):
    pass


class MalformedRecordLength(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RangeError(DataError):
    pass


class ConfigError(UsageError):
    pass


# sampling / graph
class InvalidVoxelSize(UsageError):
    pass


class InvalidRadius(UsageError):
    pass


class InvalidCap(UsageError):
    pass


# encoding
class DegenerateVector(NumericError):
    pass


class UnknownEncoder(UsageError):
    pass


# gnn
class DimensionMismatch(NumericError):
    pass


class IterationOutOfRange(NumericError):
    pass


class VertexOutsideBox(DataError):
    pass


class EmptyDataset(DataError):
    pass


# detection / evaluation / bench / cli
class NonForegroundCategory(DataError):
    pass


class UnsortedDetections(DataError):
    pass


class InsufficientFrames(DataError):
    pass


class MissingLabels(DataError):
    pass
