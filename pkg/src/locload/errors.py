"""Exception types raised across the package."""


class LocloadError(Exception):
    """Base class for all package errors."""


class InvalidDatasetError(LocloadError, ValueError):
    pass


class InvalidBatchSizeError(LocloadError, ValueError):
    pass


class InvalidFractionError(LocloadError, ValueError):
    pass


class UnevenSliceError(LocloadError, ValueError):
    pass


class InconsistentImbalanceError(LocloadError, ValueError):
    pass


class OracleLimitError(LocloadError, ValueError):
    pass


class InvalidConfigError(LocloadError, ValueError):
    pass


class SampleLoadError(LocloadError, OSError):
    """A sample file is missing or has the wrong size."""

    def __init__(self, sample_id, path, reason):
        self.sample_id = sample_id
        self.path = path
        self.reason = reason
        super().__init__(f"sample {sample_id} ({path}): {reason}")
