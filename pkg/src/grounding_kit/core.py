"""Domain types and the two primitive vector operations everything else
builds on: cosine similarity and weighted global/local fusion.

Feature vectors and feature grids are plain ``numpy.ndarray`` values.
Vectors are stored unnormalized; normalization happens only inside
:func:`cosine`, because global/local fusion is defined on raw encoder
outputs and normalizing earlier would change the method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch, WeightOutOfRange, ZeroVector

# Norms below this are treated as zero vectors. Well below any plausible
# encoder output norm.
ZERO_NORM_EPS = 1e-12

PROPOSAL = "proposal"
GROUND_TRUTH = "ground_truth"


@dataclass(frozen=True)
class Image:
    """An H x W x 3 uint8 image with an opaque identifier."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatch(f"image pixels must be HxWx3, got {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ShapeMismatch("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class MaskProposal:
    """A binary instance mask over an image."""

    bits: np.ndarray
    source: str = PROPOSAL

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got shape {bits.shape}")
        bits = (bits != 0).astype(np.uint8)
        object.__setattr__(self, "bits", bits)
        if self.source not in (PROPOSAL, GROUND_TRUTH):
            raise ValueError(f"unknown mask source {self.source!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape  # type: ignore[return-value]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not bool(self.bits.any())


@dataclass(frozen=True)
class Expression:
    """A referring expression. Must be non-empty after trimming."""

    text: str
    id: str = ""

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("expression text must be non-empty")


@dataclass(frozen=True)
class FusionWeights:
    """Global/local mixing weights for the visual (alpha) and textual
    (beta) features."""

    alpha: float = 0.95
    beta: float = 0.5

    def __post_init__(self):
        for name, w in (("alpha", self.alpha), ("beta", self.beta)):
            if not (0.0 <= w <= 1.0):
                raise WeightOutOfRange(f"{name}={w} outside [0, 1]")


@dataclass(frozen=True)
class ScoredMask:
    """One proposal's similarity against the textual feature.

    Empty proposals keep their slot with ``score=-inf`` and ``empty=True``
    so indices stay stable for evaluation bookkeeping.
    """

    proposal_index: int
    score: float
    global_score: float | None = None
    local_score: float | None = None
    empty: bool = False

    def breakdown(self) -> tuple[float, float] | None:
        if self.global_score is None or self.local_score is None:
            return None
        return self.global_score, self.local_score


EMPTY_SCORE = float("-inf")


def _as_vector(v: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def cosine(a: np.ndarray, b: np.ndarray, *, eps: float = ZERO_NORM_EPS) -> float:
    """Cosine similarity of two equal-dimension vectors.

    Raises ``DimensionMismatch`` on shape disagreement and ``ZeroVector``
    when either norm falls below ``eps``.
    """
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatch(f"vector dims differ: {va.shape[0]} vs {vb.shape[0]}")
    na = math.sqrt(float(va @ va))
    nb = math.sqrt(float(vb @ vb))
    if na < eps or nb < eps:
        raise ZeroVector(f"norms {na:.3e}, {nb:.3e} below epsilon {eps:.0e}")
    return float(va @ vb) / (na * nb)


def fuse(a: np.ndarray, b: np.ndarray, w: float) -> np.ndarray:
    """Elementwise ``w * a + (1 - w) * b`` with ``w`` in [0, 1].

    ``w=1`` returns the first (global) operand, ``w=0`` the second (local).
    """
    if not (0.0 <= w <= 1.0):
        raise WeightOutOfRange(f"fusion weight {w} outside [0, 1]")
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatch(f"vector dims differ: {va.shape[0]} vs {vb.shape[0]}")
    return w * va + (1.0 - w) * vb


@dataclass(frozen=True)
class ProposalSet:
    """The ordered, index-stable proposal list for one image."""

    proposals: tuple[MaskProposal, ...]
    image_id: str = ""

    def __post_init__(self):
        props = tuple(self.proposals)
        if not props:
            raise ValueError("proposal set must be non-empty")
        shape = props[0].shape
        for i, p in enumerate(props):
            if p.shape != shape:
                raise ShapeMismatch(
                    f"proposal {i} shape {p.shape} differs from {shape}"
                )
        object.__setattr__(self, "proposals", props)

    def __len__(self) -> int:
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)

    def __getitem__(self, i: int) -> MaskProposal:
        return self.proposals[i]

    @property
    def shape(self) -> tuple[int, int]:
        return self.proposals[0].shape
