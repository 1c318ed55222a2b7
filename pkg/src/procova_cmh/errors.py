"""Exception hierarchy. Each class carries the CLI exit code and a greppable tag."""


class ProcovaError(Exception):
    exit_code = 1
    code = "E_GENERIC"


class InputError(ProcovaError, ValueError):
    """Malformed or out-of-range input data."""

    exit_code = 2
    code = "E_INPUT"


class NumericalError(ProcovaError, ArithmeticError):
    """A statistic is undefined for the data at hand (zero MH sums, degenerate quantiles, ...)."""

    exit_code = 3
    code = "E_NUMERIC"


class ConfigError(ProcovaError, ValueError):
    exit_code = 4
    code = "E_CONFIG"
