"""Exception hierarchy shared by all modules."""


class ResEMGNetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ResEMGNetError):
    """Shapes or ranks of tensor arguments do not line up."""


class UsageError(ResEMGNetError):
    """A caller-supplied argument or configuration value is invalid."""


class FormatError(ResEMGNetError):
    """A binary file (checkpoint, packed dataset) is malformed."""


class IngestionError(ResEMGNetError):
    """A raw signal file or recording cannot be loaded or windowed."""


class OracleError(ResEMGNetError):
    """The finite-difference oracle hit a non-finite function value."""
