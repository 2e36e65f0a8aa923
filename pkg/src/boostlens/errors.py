"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: DataError -> 3, ModelError -> 4.
"""


class BoostlensError(Exception):
    pass


class DataError(BoostlensError, ValueError):
    """Bad input data: missing file, malformed header, invalid values."""


class UndefinedCorrelation(DataError):
    """Pearson correlation requested for two constant series."""


class ModelError(BoostlensError, ValueError):
    """Training or explanation cannot proceed with the given model/config."""
