"""Exception hierarchy for the store."""


class StorageError(Exception):
    """Base class for all store errors."""


class FormatError(StorageError):
    """A table, log, or manifest region failed structural validation.

    Carries the file path and region name so corruption reports identify
    exactly what failed.
    """

    def __init__(self, path, region, detail=""):
        self.path = path
        self.region = region
        msg = f"{path}: bad {region}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class IntegrityError(StorageError):
    """Cross-file bookkeeping is inconsistent (missing file, bad reference)."""


class AccountingError(IntegrityError):
    """Garbage or dependency accounting referenced an unknown file."""


class WriteStalled(StorageError):
    """Foreground write blocked on the space throttle beyond its timeout."""


class ConfigError(StorageError):
    """Rejected configuration value."""
