"""Exception hierarchy shared by every module."""


class AnticipateError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(AnticipateError, ValueError):
    pass


class ResourceLimitError(AnticipateError):
    pass


class DataFormatError(AnticipateError):
    """A dataset or scenario file does not conform to its documented format."""


class ParseError(DataFormatError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataFormatError):
    def __init__(self, message, sequence_id=None, frame_index=None, line=None):
        self.sequence_id = sequence_id
        self.frame_index = frame_index
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if sequence_id is not None:
            where.append(f"sequence {sequence_id!r}")
        if frame_index is not None:
            where.append(f"frame {frame_index}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class UnknownLabelError(SchemaError):
    pass


class CheckpointError(AnticipateError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass
