"""Proposal scoring and argmax selection.

Every proposal in a set is scored against the fused textual feature;
empty proposals keep their slot with a -inf sentinel so indices stay
stable. Scoring is embarrassingly parallel across proposals and
guarantees the same score list for any schedule.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import (
    EMPTY_SCORE,
    Expression,
    FusionWeights,
    Image,
    ProposalSet,
    ScoredMask,
    cosine,
)
from .encoders import (
    ResidualVisualEncoder,
    TextEncoder,
    TransformerVisualEncoder,
    VisualEncoder,
)
from .errors import SelectionImpossible
from .text import ParseTree, global_local_text_feature
from .visual import FeatureCache, MaskingConfig, global_local_visual_feature


def score_proposals(
    vh: VisualEncoder,
    th: TextEncoder,
    img: Image,
    props: ProposalSet,
    T: Expression,
    p: ParseTree | None,
    weights: FusionWeights = FusionWeights(),
    cfg: MaskingConfig = MaskingConfig(),
    cache: FeatureCache | None = None,
    workers: int = 1,
) -> list[ScoredMask]:
    """Score every proposal against the global-local textual feature.

    The backbone runs once per image (through ``cache``) and is reused
    across proposals. Results are order-preserving: entry i scores
    proposal i.
    """
    cache = cache or FeatureCache()
    t = global_local_text_feature(th, T, p, weights.beta)
    # warm the per-image backbone state once before fanning out
    if isinstance(vh, TransformerVisualEncoder):
        cache.boundary_tokens(vh, img, cfg.mask_layers)
    elif isinstance(vh, ResidualVisualEncoder):
        cache.backbone_grid(vh, img)

    def score_one(index: int) -> ScoredMask:
        m = props[index]
        if m.is_empty():
            return ScoredMask(proposal_index=index, score=EMPTY_SCORE, empty=True)
        feats = global_local_visual_feature(vh, img, m, weights.alpha, cfg, cache)
        return ScoredMask(
            proposal_index=index,
            score=cosine(t, feats.fused),
            global_score=cosine(t, feats.global_context),
            local_score=cosine(t, feats.local_context),
        )

    if workers > 1 and vh.concurrent_safe and len(props) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(score_one, range(len(props))))
    return [score_one(i) for i in range(len(props))]


def scored_from_values(values: list[float]) -> list[ScoredMask]:
    """Wrap raw per-proposal scores (as baselines emit) into ScoredMask
    rows, honoring the -inf empty sentinel."""
    return [
        ScoredMask(proposal_index=i, score=float(v), empty=not np.isfinite(v))
        for i, v in enumerate(values)
    ]


def select_mask(scored: list[ScoredMask]) -> ScoredMask:
    """Argmax over non-sentinel scores; ties break toward the lowest
    proposal index."""
    best: ScoredMask | None = None
    for s in scored:
        if s.empty or not np.isfinite(s.score):
            continue
        if best is None or s.score > best.score:
            best = s
    if best is None:
        raise SelectionImpossible("no proposal with a finite score")
    return best
