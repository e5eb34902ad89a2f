"""Exception hierarchy shared by every lorafuse package."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence


class LoraFuseError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(LoraFuseError):
    """Raised when a run configuration violates the schema.

    Every offending key is collected before raising so the user sees them all.
    """

    def __init__(self, problems: Sequence[str], *, source: str | Path | None = None):
        self.problems = list(problems)
        self.source = str(source) if source is not None else None
        super().__init__(self._build_message())

    def _build_message(self) -> str:
        head = f"invalid configuration {self.source}" if self.source else "invalid configuration"
        return head + ":\n" + "\n".join(f"  - {p}" for p in self.problems)


class UsageError(LoraFuseError):
    """Unknown command or malformed command line."""


class ShapeError(LoraFuseError, ValueError):
    """Raised when operand dimensions do not line up."""

    def __init__(self, op: str, *shapes: tuple[int, ...], where: str | None = None):
        self.op = op
        self.shapes = shapes
        self.where = where
        super().__init__(self._build_message())

    def _build_message(self) -> str:
        parts = [f"{self.op}: incompatible shapes " + ", ".join(_fmt_shape(s) for s in self.shapes)]
        if self.where:
            parts.append(f"({self.where})")
        return " ".join(parts)


class DataError(LoraFuseError):
    """Non-finite values, non-convergence or otherwise unusable numeric data."""


class ParameterError(LoraFuseError, ValueError):
    """A numeric parameter is outside its admissible range."""


class MapError(LoraFuseError):
    """A prune map does not fit the backbone it is applied to."""


class AccountingError(LoraFuseError):
    """Inconsistent counts: empty reports or batches, impossible parameter totals."""


class RecoveryError(LoraFuseError):
    """Recovery of pruned factors into the full space failed for a layer."""

    def __init__(self, layer: str, reason: str):
        self.layer = layer
        self.reason = reason
        super().__init__(f"layer {layer!r}: {reason}")


class ProtocolError(LoraFuseError):
    """Clients violate a fusion protocol assumption."""


class TrainingError(LoraFuseError):
    """Local training diverged."""

    def __init__(self, step: int, loss: float, *, client: str | None = None):
        self.step = step
        self.loss = loss
        self.client = client
        who = f"{client}: " if client else ""
        super().__init__(f"{who}training diverged at step {step} (loss={loss!r})")


class ArtifactError(LoraFuseError):
    """Base class for adapter-file and report problems."""


class ArtifactIOError(ArtifactError):
    """Reading or writing an artifact failed at the OS level."""

    def __init__(self, path: str | Path, reason: str):
        self.path = Path(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class FormatError(ArtifactError):
    """The artifact is not in the expected format."""

    def __init__(self, path: str | Path, *, expected: object, found: object, field: str):
        self.path = Path(path)
        self.expected = expected
        self.found = found
        self.field = field
        super().__init__(f"{self.path}: bad {field}: expected {expected!r}, found {found!r}")


class IntegrityError(ArtifactError):
    """Checksum or length mismatch in an artifact."""

    def __init__(self, path: str | Path, reason: str):
        self.path = Path(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class StageError(LoraFuseError):
    """A pipeline stage failed; wraps the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def _fmt_shape(shape: Iterable[int]) -> str:
    return "(" + "x".join(str(d) for d in shape) + ")"
