class ConfigError(ValueError):
    """Invalid configuration or inconsistent inputs (CLI exit code 2)."""


class DatasetIOError(OSError):
    """Missing or unreadable dataset files (CLI exit code 3)."""


class NumericalError(ArithmeticError):
    """Non-finite loss or gradient during training (CLI exit code 4)."""
