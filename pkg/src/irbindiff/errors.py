"""Exception types shared across the package.

Everything raised on bad user input or bad data derives from IRBinDiffError
so the CLI can map it to a clean exit code. Programming errors (plain
TypeError and friends) are deliberately left alone.
"""

from __future__ import annotations


class IRBinDiffError(Exception):
    """Base class for all domain errors."""


class ParseError(IRBinDiffError):
    """Malformed IR text. Carries the 1-based source line when known."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ConfigError(IRBinDiffError):
    """Invalid configuration value or file."""


class InputError(IRBinDiffError):
    """Well-formed call with data the model cannot accept (e.g. unknown ids)."""


class ShapeError(IRBinDiffError):
    """Tensor operands with incompatible shapes. Message names both shapes."""


class NumericError(IRBinDiffError):
    """NaN or Inf produced by a tensor operation."""


class GraphError(IRBinDiffError):
    """Edge references a node outside the graph."""


class CheckpointError(IRBinDiffError):
    """Checkpoint payload does not match the expected parameter shapes."""


class StageError(IRBinDiffError):
    """A pipeline stage is missing an artifact from an earlier stage."""


class MetricError(IRBinDiffError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""
