"""Exception hierarchy.

Everything a user can trigger with bad input derives from :class:`DataError`,
which the command line maps to exit code 2.
"""

from __future__ import annotations


class DataError(Exception):
    """Invalid input data, file or configuration."""


class FormatError(DataError):
    pass


class TruncationError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class DuplicateIdError(DataError):
    pass


class ZeroVectorError(DataError):
    pass


class EmptyCatalogError(DataError):
    pass


class AlignmentError(DataError):
    pass


class DegenerateWeightsError(DataError):
    pass


class DimError(DataError):
    pass


class EmptyGalleryError(DataError):
    pass


class MissingLabelError(DataError):
    pass


class RangeError(DataError):
    pass


class CardinalityError(DataError):
    pass


class MissingPredictionError(DataError):
    pass


class CatalogError(DataError):
    pass


class NonLandmarkSetError(DataError):
    pass


class DuplicateInListError(DataError):
    pass


class UnknownQueryError(DataError):
    pass


class GridTooLargeError(DataError):
    pass


class ConfigError(DataError):
    pass
