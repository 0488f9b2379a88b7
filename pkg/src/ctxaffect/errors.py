"""Exception hierarchy shared by every module."""


class CtxAffectError(Exception):
    pass


class DimensionError(CtxAffectError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(CtxAffectError, RuntimeError):
    """An operation was used outside its documented preconditions."""


class NumericError(CtxAffectError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class InputError(CtxAffectError, ValueError):
    """Bad user-supplied data (empty dataset, too few samples, ...)."""


class ConfigError(CtxAffectError, ValueError):
    pass


class FormatError(CtxAffectError, ValueError):
    """Malformed on-disk artifact."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class PipelineError(CtxAffectError, RuntimeError):
    """A pipeline stage is missing a prerequisite or got inconsistent artifacts."""
