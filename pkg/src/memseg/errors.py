"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process exit statuses (2 usage/config, 3 data, 4 numerical).
"""


class MemsegError(Exception):
    exit_code = 3


class ConfigError(MemsegError):
    exit_code = 2


class DataError(MemsegError):
    exit_code = 3


class NumericalError(MemsegError):
    exit_code = 4


class UnsupportedFormat(DataError):
    pass


class UnsupportedDatatype(DataError):
    pass


class DimensionError(DataError):
    pass


class CorruptData(DataError):
    pass


class SizeMismatch(DataError):
    pass


class LabelError(DataError):
    pass


class IoError(DataError):
    pass


class InvalidChunkSize(ConfigError):
    pass


class EmptySchedule(DataError):
    pass


class EmptyStructure(DataError):
    pass


class NoBoneInterface(DataError):
    pass


class MeasurementUnavailable(DataError):
    pass


class Converged(Exception):
    """Raised by ``next_click`` when prediction and reference agree."""


class CoordinateError(DataError):
    pass


class ConfigMismatch(ConfigError):
    pass


class SpecError(ConfigError):
    pass


class DatasetError(DataError):
    pass


class DivergenceError(NumericalError):
    pass


class GradCheckFailure(NumericalError):
    pass
