"""Exception types raised across the package."""


class SnkError(Exception):
    pass


class ShapeError(SnkError, ValueError):
    """Tensor or weight shapes disagree with what an operation requires."""


class DivisibilityError(ShapeError):
    """A channel count is not divisible by the group count."""


class ChannelRangeError(SnkError, IndexError):
    pass


class CorruptModelError(SnkError):
    """Model file has a bad magic, unknown version, or is truncated."""


class SearchError(SnkError):
    """Width search could not match the reference complexity."""


class ThreadingError(SnkError, RuntimeError):
    """Kernel layer is configured with more than one worker."""
