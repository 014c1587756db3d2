"""Exception hierarchy shared by every module."""


class MlfpnError(Exception):
    """Base class for all engine errors."""


class ConfigError(MlfpnError, ValueError):
    """Invalid configuration or mismatched parameter dimensions."""


class ShapeError(MlfpnError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class FormatError(MlfpnError, ValueError):
    """A tensor file or parameter store is malformed."""


class ConsistencyError(MlfpnError, RuntimeError):
    """Two parts of the pipeline disagree about a quantity they must share."""
