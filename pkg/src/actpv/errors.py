"""Exception hierarchy shared across the package."""


class ActPVError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(ActPVError, ValueError):
    exit_code = 1


class UsageError(ActPVError, ValueError):
    exit_code = 1


class InputError(ActPVError, ValueError):
    exit_code = 2


class ParseError(InputError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class DegenerateBucketError(ConfigurationError):
    pass


class UndefinedMetricError(ActPVError, ArithmeticError):
    exit_code = 3


class TrainingError(ActPVError, RuntimeError):
    exit_code = 3

    def __init__(self, message, epoch=None, batch=None, member=None):
        parts = []
        if member is not None:
            parts.append(f"member {member}")
        if epoch is not None:
            parts.append(f"epoch {epoch}")
        if batch is not None:
            parts.append(f"batch {batch}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.epoch = epoch
        self.batch = batch
        self.member = member
