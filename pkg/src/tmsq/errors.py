"""Exception hierarchy shared by the library and the command line."""


class TmsqError(Exception):
    """Base class for all package errors."""


class PreconditionError(TmsqError, ValueError):
    """An operation was asked to work outside its preconditions."""


class DataError(TmsqError):
    """Input data is missing, malformed or inconsistent."""


class MissingRecordError(DataError):
    pass


class TraceFileError(DataError):
    """Base class for trace container problems."""


class BadMagicError(TraceFileError):
    pass


class UnsupportedVersionError(TraceFileError):
    pass


class TruncatedFileError(TraceFileError):
    pass


class ChannelMismatchError(TraceFileError):
    pass
