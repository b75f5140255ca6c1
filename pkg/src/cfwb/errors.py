"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class WorkbenchError(Exception):
    exit_code = 1


class UsageError(WorkbenchError):
    exit_code = 2


class ConfigError(UsageError):
    exit_code = 2


class ShapeError(UsageError):
    exit_code = 2


class DataError(WorkbenchError):
    exit_code = 3


class FormatError(DataError):
    exit_code = 3


class NumericalError(WorkbenchError):
    exit_code = 4
