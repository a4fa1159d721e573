"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies rather than bare ValueError.
"""


class BoneAgeError(Exception):
    """Base class for all package errors. CLI exit code 3 unless overridden."""

    exit_code = 3


class DataFormatError(BoneAgeError):
    """Malformed input: bad JSONL line, wrong CSV column count, unknown label."""


class InvariantError(BoneAgeError):
    """A domain precondition failed (degenerate outline, empty stratum, ...)."""


class NumericError(BoneAgeError):
    """Numerical failure: rank deficiency, non-convergence, invalid transform."""

    exit_code = 4
