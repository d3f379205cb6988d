"""Exception hierarchy shared across the simulator."""


class FedarError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FedarError):
    """Invalid configuration: bad value, unknown key, inconsistent sections.

    ``details`` holds one message per offending field, each prefixed with a
    dotted path into the config document (e.g. ``task.batch_size``).
    """

    def __init__(self, details):
        if isinstance(details, str):
            details = [details]
        self.details = list(details)
        super().__init__("; ".join(self.details))


class ShapeError(FedarError):
    """Array shapes inconsistent with the model architecture."""


class DataError(FedarError):
    """Bad data fed to a numeric or dataset operation."""


class IdxError(DataError):
    """Base for IDX file loading failures."""


class IdxMagicError(IdxError):
    """IDX file does not start with the expected magic number."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the number of records."""


class IdxTruncatedError(IdxError):
    """IDX file ends before the declared payload."""


class PartitionError(DataError):
    """Pool cannot satisfy a client's sample demand."""


class TrustError(FedarError):
    """Trust ledger misuse: duplicate registration or round entry."""
