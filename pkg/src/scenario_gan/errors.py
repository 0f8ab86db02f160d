"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class ScenarioGanError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ScenarioGanError, ValueError):
    """Invalid configuration or argument value (CLI exit code 1)."""


class DataError(ScenarioGanError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class DegenerateInputError(DataError):
    """Input is well-formed but statistically degenerate, e.g. zero variance."""


class ShapeError(ScenarioGanError, ValueError):
    """Array shape does not match what a network or problem expects."""


class NumericalError(ScenarioGanError, ArithmeticError):
    """Non-finite values appeared during a computation (CLI exit code 3)."""
