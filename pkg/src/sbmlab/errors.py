"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class FactorizationFailure(RuntimeError):
    """Covariance matrix could not be factorized even with maximal jitter."""


class MismatchedField(ValueError):
    """Environment field sampled at locations other than the particle positions."""


class StabilityError(ValueError):
    """Time step violates the explicit scheme's stability bound."""


class ParseError(ValueError):
    """Configuration text is not a well-formed document."""


class ValidationError(ValueError):
    """Configuration breaks an invariant; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
