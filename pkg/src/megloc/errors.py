"""Exception hierarchy shared by all megloc modules."""


class MeglocError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(MeglocError, ValueError):
    """An argument violates a documented precondition."""


class SingularityError(MeglocError, ValueError):
    """Geometry puts a sensor on top of a source (field is undefined)."""


class NumericError(MeglocError, ArithmeticError):
    """A numeric computation failed (non-finite values, rank deficiency,
    eigensolver breakdown)."""


class FormatError(MeglocError, ValueError):
    """A binary file has the wrong magic bytes or an unsupported version."""


class CorruptFileError(FormatError):
    """A binary file is truncated or otherwise inconsistent with its header."""


class CompatibilityError(MeglocError, RuntimeError):
    """Two artifacts (lead field, dataset, model) carry mismatched
    content fingerprints and must not be combined."""


class ConfigError(MeglocError, ValueError):
    """A run configuration is malformed: unknown key, bad value, or a
    missing input file."""

