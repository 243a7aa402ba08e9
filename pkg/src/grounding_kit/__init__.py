"""grounding-kit: zero-shot referring image segmentation by scoring
instance mask proposals against referring expressions with global-local
context features from a contrastively-aligned dual encoder."""

from .core import (
    EMPTY_SCORE,
    Expression,
    FusionWeights,
    Image,
    MaskProposal,
    ProposalSet,
    ScoredMask,
    cosine,
    fuse,
)
from .maskio import EvalRecord, RleMask, rle_decode, rle_encode
from .scoring import score_proposals, select_mask
from .text import NounPhrase, ParseTree, extract_target_np
from .visual import MaskingConfig, crop_to_mask, resize_mask_to_grid

__version__ = "0.1.0"

__all__ = [
    "EMPTY_SCORE",
    "EvalRecord",
    "Expression",
    "FusionWeights",
    "Image",
    "MaskProposal",
    "MaskingConfig",
    "NounPhrase",
    "ParseTree",
    "ProposalSet",
    "RleMask",
    "ScoredMask",
    "cosine",
    "crop_to_mask",
    "extract_target_np",
    "fuse",
    "resize_mask_to_grid",
    "rle_decode",
    "rle_encode",
    "score_proposals",
    "select_mask",
    "__version__",
]
