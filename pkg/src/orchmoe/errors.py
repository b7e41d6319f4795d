"""Exception types shared across the package."""


class OrchMoEError(Exception):
    """Base class for package errors."""


class ContractError(OrchMoEError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes do not agree."""


class EvaluationError(OrchMoEError, ArithmeticError):
    """A numeric evaluation produced a non-finite value."""


class DivergenceError(EvaluationError):
    """Training loss became non-finite."""


class DegenerateRowError(ContractError):
    """A matrix row cannot be normalized (all zeros)."""


class LookupContractError(ContractError, KeyError):
    """An ID or name is outside the known range."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ConfigError(ContractError):
    """A run configuration failed validation."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class CheckpointFormatError(OrchMoEError):
    """A checkpoint file is truncated or malformed."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")
