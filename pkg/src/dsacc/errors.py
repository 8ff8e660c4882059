"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller violated a documented precondition (bad shape, range, or value)."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value.

    ``payload`` carries whatever state is useful for diagnosing the failure
    (inputs, iterate traces, step counters) and is JSON-serialisable.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = dict(payload or {})


class EnvFault(RuntimeError):
    """The environment raised while being stepped; ``dump`` holds loop state."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dict(dump or {})
