class DomainError(ValueError):
    """Raised when an argument falls outside the domain of an operation."""


class EnumerationLimitError(RuntimeError):
    """Raised when an exact enumeration would exceed the configured bound."""


class DegenerateConstraintError(RuntimeError):
    """Raised when the constraint assigns zero mass to every continuation."""


class ConfigError(ValueError):
    """Raised when an experiment configuration fails validation.

    ``problems`` lists every issue found, not just the first.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
