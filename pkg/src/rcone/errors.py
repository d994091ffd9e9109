"""Exception categories; the CLI maps each onto an exit code."""


class RConeError(Exception):
    exit_code = 1


class ConfigError(RConeError):
    """Invalid configuration. ``violations`` lists every problem found."""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DataError(RConeError):
    exit_code = 3


class NumericError(RConeError):
    exit_code = 4
