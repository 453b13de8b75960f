"""Exception hierarchy shared by every qpu-kit module."""

from __future__ import annotations


class QpuKitError(Exception):
    """Base class for all qpu-kit failures."""


class QuaternionDomainError(QpuKitError, ValueError):
    """Input outside an operation's domain (zero-length vector, empty chain)."""


class ContractViolation(QpuKitError, ValueError):
    """Shapes, widths or tapes that do not belong together."""


class DegenerateEdgeError(QpuKitError):
    """A perturbed skeleton has a zero-length edge; the caller should resample."""


class DatasetFormatError(QpuKitError):
    """Dataset file with bad magic, unknown version or truncated records."""


class CheckpointFormatError(QpuKitError):
    """Model checkpoint that cannot be decoded."""


class ConfigError(QpuKitError):
    """Configuration values that contradict each other."""
