"""Shared exception types with stable CLI exit-code mappings."""


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or failed its CRC check."""
