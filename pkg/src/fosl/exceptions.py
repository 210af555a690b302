"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class FoslError(Exception):
    exit_code = 2


class DataError(FoslError, ValueError):
    """Malformed or inconsistent input data."""


class ShapeError(DataError):
    """Array dimensions disagree with what the operation needs."""


class ConfigError(FoslError, ValueError):
    """Invalid configuration or parameter combination."""


class RangeError(ConfigError):
    """A requested window falls outside the available horizon."""


class AlignmentError(ConfigError):
    """A time offset does not land on the sampling grid."""


class MiningError(DataError):
    """No valid triplet can be mined (e.g. a singleton class)."""


class PathError(DataError):
    """A warp path is invalid for the series it is applied to."""


class NumericFailure(FoslError, ArithmeticError):
    exit_code = 3


class InstabilityError(NumericFailure):
    """The simulated trajectory diverged."""
