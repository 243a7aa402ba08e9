"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class GroundingError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(GroundingError):
    """Two vectors or grids that must share a shape do not."""


class ZeroVector(GroundingError):
    """A vector whose norm is below the zero-detection epsilon."""


class WeightOutOfRange(GroundingError):
    """A fusion weight outside the closed unit interval."""


class EmptyMask(GroundingError):
    """A mask with no foreground pixels where one is required."""


class ShapeMismatch(GroundingError):
    """Mask or image shapes that must agree do not."""


class EncoderFailure(GroundingError):
    """An encoder adapter could not produce a feature."""


class GradientsUnsupported(GroundingError):
    """The adapter cannot provide similarity gradients."""


class SurgeryUnsupported(GroundingError):
    """The adapter does not expose the projection weights needed for
    dense score-map surgery."""


class MalformedParse(GroundingError):
    """A dependency parse with no root, several roots, or cyclic heads."""


class SelectionImpossible(GroundingError):
    """No scorable proposal exists for an example."""


class MalformedRle(GroundingError):
    """Run-length counts inconsistent with the declared mask size."""


class SchemaError(GroundingError):
    """A file failed structural validation.

    Carries the file path and the offending key so callers can surface
    actionable messages.
    """

    def __init__(self, message: str, *, path: str | None = None, key: str | None = None):
        self.path = path
        self.key = key
        detail = message
        if key is not None:
            detail += f" (key: {key})"
        if path is not None:
            detail += f" [{path}]"
        super().__init__(detail)


class TextTruncationWarning(UserWarning):
    """Emitted when an over-long expression is truncated by a text encoder."""
