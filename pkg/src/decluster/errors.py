"""Exception hierarchy shared by the whole engine.

Every error carries a ``category`` used by the CLI to pick its exit code
(config=2, io=3, numeric=4) and by the HTTP service to pick a status code.
"""


class ClusterError(Exception):
    """Base class for all engine errors."""

    category = "config"


class InvalidInput(ClusterError):
    """Precondition violation: bad argument, shape mismatch, invalid config."""

    category = "config"


class FormatError(ClusterError):
    """Malformed or unreadable data file.

    ``code`` names the specific defect (bad_magic, bad_version, truncated,
    trailing_data, bad_flags, bad_dim_shape, bad_id, duplicate_id,
    non_finite, ragged_row, bad_number).
    """

    category = "io"

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class NumericFailure(ClusterError):
    """Computation produced an undefined or non-finite result."""

    category = "numeric"


EXIT_CODES = {"config": 2, "io": 3, "numeric": 4}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ClusterError):
        return EXIT_CODES[exc.category]
    if isinstance(exc, OSError):
        return EXIT_CODES["io"]
    return 1
