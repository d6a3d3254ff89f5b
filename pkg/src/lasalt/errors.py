"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration or model parameters.

    ``key`` and ``line`` point at the offending entry when known.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalFailure(RuntimeError):
    """A run produced non-finite values or violated a hard numerical guard.

    ``records`` holds every diagnostics record emitted before the failure,
    terminated by a record carrying ``failed=1``.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records or [])
