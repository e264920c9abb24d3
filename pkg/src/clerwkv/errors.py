"""Shared error types."""


class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


class NumericFault(ArithmeticError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class InvalidOracleError(RuntimeError):
    """A verification oracle cannot be trusted (e.g. non-deterministic function)."""
