class BrwError(Exception):
    """Base class for every error raised by the harness"""


class DomainError(BrwError, ValueError):
    """A cumulant was evaluated outside the declared finiteness domain"""


class InvalidModelError(BrwError, ValueError):
    """A displacement model is malformed or violates a required assumption"""


class RegimeError(BrwError, ValueError):
    """A tilt does not satisfy the hypotheses of the limit result it is used with"""


class InsufficientDataError(BrwError, ValueError):
    pass


class BudgetExceededError(BrwError, RuntimeError):
    """A replicate created more particles than its budget allows.

    The replicate index travels with the error so that a failure inside a
    worker process can be traced back to its seed.
    """

    def __init__(self, message, replicate=None):
        super().__init__(message)
        self.message = message
        self.replicate = replicate

    def __reduce__(self):
        return self.__class__, (self.message, self.replicate)

    def __str__(self):
        if self.replicate is None:
            return self.message
        return f"replicate {self.replicate}: {self.message}"


class ConfigError(BrwError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message

    def __reduce__(self):
        return self.__class__, (self.path, self.message)
