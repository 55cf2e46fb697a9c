"""Exception hierarchy shared by every module in the package."""


class GILError(Exception):
    """Base class for all package errors."""


class InputError(GILError, ValueError):
    """Caller supplied arguments that violate an operation's preconditions."""


class DimensionError(InputError):
    """Array shapes do not chain; ``layer`` names the offending layer when known."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ContractError(GILError, ValueError):
    pass


class CapabilityError(GILError, NotImplementedError):
    pass


class ConsistencyError(GILError, ValueError):
    pass


class NumericError(GILError, ArithmeticError):
    pass


class TrainingError(NumericError):
    """A loss went non-finite during training."""

    def __init__(self, message, step=None, component=None):
        super().__init__(message)
        self.step = step
        self.component = component


class FormatError(GILError, ValueError):
    """Malformed binary file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GenerationError(GILError, RuntimeError):
    pass


class ConfigError(GILError, ValueError):
    pass
