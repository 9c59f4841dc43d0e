"""Exception hierarchy shared by all modules."""


class EIPError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(EIPError, ValueError):
    pass


class DomainError(EIPError, ValueError):
    """An input lies outside the domain where a model is defined."""


class DegenerateProfileError(EIPError, ValueError):
    pass


class DegeneratePeaksError(EIPError, ValueError):
    pass


class AllMaskedError(EIPError, ValueError):
    """A mask would remove the whole cycle, leaving nothing to fit."""


class EmptySupportError(EIPError, ValueError):
    pass


class UnsolvablePixelError(EIPError, RuntimeError):
    pass


class AmbiguousNormalError(EIPError, ValueError):
    pass


class ParseError(EIPError, ValueError):
    """Malformed input file; the message names the offending line or record."""
