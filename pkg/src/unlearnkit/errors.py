"""Exception types shared across the toolkit."""


class UnlearnKitError(Exception):
    pass


class ConfigError(UnlearnKitError, ValueError):
    """A configuration violates one of its invariants."""


class InputError(UnlearnKitError, ValueError):
    """Arguments have the wrong shape, range or are empty."""


class ValidationError(UnlearnKitError, ValueError):
    """A dataset manifest or bundle breaks a structural invariant."""


class NumericalError(UnlearnKitError, ArithmeticError):
    def __init__(self, message: str, tensor_name: str | None = None):
        super().__init__(message)
        self.tensor_name = tensor_name


class ImageReadError(UnlearnKitError, OSError):
    def __init__(self, message: str, ids: list[str]):
        super().__init__(message)
        self.ids = ids
