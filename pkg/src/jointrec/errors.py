"""Exception types raised across the package."""


class JointrecError(Exception):
    """Base class for all errors raised by this package."""


class DuplicateCoordinateError(JointrecError):
    def __init__(self, row_key: str, col_key: str):
        super().__init__(f"duplicate coordinate ({row_key!r}, {col_key!r})")
        self.row_key = row_key
        self.col_key = col_key


class NonFiniteValueError(JointrecError):
    pass


class DimensionMismatchError(JointrecError):
    pass


class RowCountMismatchError(JointrecError):
    pass


class UnknownEntityError(JointrecError):
    pass


class EmptyInputError(JointrecError):
    pass


class UnknownEntityInMessageError(JointrecError):
    pass


class MissingSlaveReplyError(JointrecError):
    pass


class ManifestError(JointrecError):
    pass
