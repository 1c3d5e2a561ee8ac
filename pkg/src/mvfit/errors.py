"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericalError -> 4.
"""


class MvfitError(Exception):
    pass


class DataError(MvfitError):
    """Malformed or inconsistent input data (files, assets, configs)."""


class NumericalError(MvfitError):
    """A numerical operation failed (degenerate system, NaN loss, ...)."""


class DegenerateRaysError(NumericalError):
    """Ray bundle does not constrain the translation (near-singular normal matrix)."""
