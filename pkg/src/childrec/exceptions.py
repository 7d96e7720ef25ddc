"""Exception classes for childrec."""

from __future__ import annotations


class ChildrecError(Exception):
    """Base exception for childrec library."""


class IngestionError(ChildrecError):
    """A rating file could not be ingested.

    Attributes:
        line_no: 1-based line number of the offending line (0 if unknown).
        reason: Human readable description of the problem.
    """

    def __init__(self, line_no: int, reason: str) -> None:
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"Line {line_no}: {reason}")


class InfeasibleParametersError(ChildrecError):
    """Synthetic generation parameters are invalid or cannot be satisfied."""


class UnknownEntityError(ChildrecError):
    """A user or item reference is not present in the dataset."""


class UnknownUserError(UnknownEntityError):
    """User reference is not present in the dataset."""


class UnknownItemError(UnknownEntityError):
    """Item reference is not present in the dataset."""


class EmptyDatasetError(ChildrecError):
    """An operation needs ratings but the dataset has none."""


class DivergenceError(ChildrecError):
    """Matrix factorization produced a non-finite parameter.

    Attributes:
        pass_no: 1-based training pass after which divergence was detected.
    """

    def __init__(self, pass_no: int) -> None:
        self.pass_no = pass_no
        super().__init__(f"Training diverged during pass {pass_no}")


class ConfigError(ChildrecError):
    """Invalid predictor or experiment configuration."""


class MismatchedTestSetError(ChildrecError):
    """Two results were not evaluated on the same test pair sequence."""
