class ConfigError(ValueError):
    """Invalid run, policy or table configuration."""


class UndefinedEstimateError(ArithmeticError):
    """A statistic needs a cell (or setting) that saw no events."""

    def __init__(self, message: str, cells=()):
        super().__init__(message)
        self.cells = tuple(cells)
