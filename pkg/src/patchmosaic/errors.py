"""Exception hierarchy shared across the package.

ValidationError covers bad parameters and incompatible inputs (CLI exit
code 2); DataError covers corrupt or inconsistent file contents (exit
code 3). Plain OSError is left to propagate for real I/O failures
(exit code 4).
"""


class PatchmosaicError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PatchmosaicError):
    """Invalid parameters or inputs that violate an operation's contract."""


class DataError(PatchmosaicError):
    """Corrupt, truncated, or mutually inconsistent data files."""
