class ConfigError(ValueError):
    """Invalid or inconsistent configuration; carries every problem found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CourantError(RuntimeError):
    """A transport step would violate its Courant condition."""


class NumericalError(RuntimeError):
    """Non-finite values or a failed internal consistency check."""
