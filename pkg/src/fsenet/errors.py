class FSENetError(Exception):
    """Base class for package errors."""


class ImageFormatError(FSENetError):
    """File is not a readable 8-bit PNG/JPEG."""


class StructureError(FSENetError, ValueError):
    """Array shapes do not satisfy an operation's layout contract."""


class ConfigError(FSENetError, ValueError):
    pass


class CheckpointError(FSENetError):
    pass


class TrainingDiverged(FSENetError, RuntimeError):
    pass


class ParameterError(FSENetError, ValueError):
    """A numeric argument is outside its allowed range."""
