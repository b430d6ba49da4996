"""Exception hierarchy.

Every error carries a stable ``exit_code`` used by the command-line tool.
The exit-code table is part of the public contract; do not renumber.
"""

from __future__ import annotations


class RemotenessError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def name(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict:
        out = {"error": self.name, "exit_code": self.exit_code, "message": self.message}
        for key, value in self.context.items():
            if value is not None:
                out[key] = value
        return out


class InputNotFound(RemotenessError):
    exit_code = 3


class MalformedHeader(RemotenessError):
    exit_code = 4


class DuplicatePlace(RemotenessError):
    exit_code = 5


class InvalidCoordinate(RemotenessError):
    exit_code = 6


class NegativePopulation(RemotenessError):
    exit_code = 7


class InvalidRow(RemotenessError):
    """Row that cannot be parsed at all (bad integer, missing id, ...)."""

    exit_code = 8


class ConfigError(RemotenessError):
    exit_code = 9


class CoordinateModeError(RemotenessError):
    exit_code = 10


class EmptyCategory(RemotenessError):
    """No member of a category other than the queried place itself."""

    exit_code = 11


class MissingCategory(RemotenessError):
    exit_code = 12


class NoCountyIds(RemotenessError):
    exit_code = 13


class InsufficientOverlap(RemotenessError):
    exit_code = 14


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in (
        RemotenessError,
        InputNotFound,
        MalformedHeader,
        DuplicatePlace,
        InvalidCoordinate,
        NegativePopulation,
        InvalidRow,
        ConfigError,
        CoordinateModeError,
        EmptyCategory,
        MissingCategory,
        NoCountyIds,
        InsufficientOverlap,
    )
}
