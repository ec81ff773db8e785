"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or missing configuration field; carries the field name."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class ProposalDensityError(RuntimeError):
    """A proposal returned a non-finite log density where positivity is
    guaranteed (broken proposal or misconfigured kernel)."""


class NumericError(RuntimeError):
    """Non-finite particle state; carries the offending iteration."""

    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")
