"""Zero-shot comparison methods, each producing per-proposal scores
compatible with argmax selection.

* grad-cam: ReLU of channel-weighted backbone activations, channel
  weights from the spatial mean of the image-text similarity gradient,
  averaged over in-mask cells.
* score-map: the value and output projections of the pooling attention
  applied per cell as two 1x1 convolutions, per-cell cosine with the
  text feature, averaged over in-mask cells.
* region-token: token masking applied before every transformer layer.
* cropping: the local-context crop feature alone (the main pipeline at
  alpha = 0).

Empty proposals score -inf so index alignment survives selection.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .core import EMPTY_SCORE, Image, ProposalSet, cosine
from .encoders import (
    ResidualVisualEncoder,
    TransformerVisualEncoder,
    VisualEncoder,
)
from .errors import SurgeryUnsupported
from .visual import (
    FeatureCache,
    MaskingConfig,
    local_visual_feature,
    resize_mask_to_grid,
    token_masked_class_feature,
)


class BaselineKind(Enum):
    GRAD_CAM = "grad_cam"
    SCORE_MAP = "score_map"
    REGION_TOKEN = "region_token"
    CROPPING = "cropping"

    @classmethod
    def parse(cls, name: str) -> "BaselineKind":
        return cls(name.strip().lower().replace("-", "_"))


def mask_mean_scores(map2d: np.ndarray, props: ProposalSet) -> list[float]:
    """Mean of a per-cell map over each proposal's in-mask grid cells."""
    map2d = np.asarray(map2d, dtype=np.float64)
    scores: list[float] = []
    for m in props:
        if m.is_empty():
            scores.append(EMPTY_SCORE)
            continue
        gm = resize_mask_to_grid(m, map2d.shape)
        scores.append(float(map2d[gm != 0].mean()))
    return scores


def activation_map(vh: VisualEncoder, img: Image, t: np.ndarray,
                   cache: FeatureCache | None = None) -> np.ndarray:
    """Gradient-weighted class activation map over the backbone grid."""
    cache = cache or FeatureCache()
    grad = vh.similarity_gradient(img, t)
    if isinstance(vh, ResidualVisualEncoder):
        grid = cache.backbone_grid(vh, img)
    else:
        grid = vh.backbone_features(img)
    channel_weights = grad.mean(axis=(1, 2))
    cam = np.einsum("c,chw->hw", channel_weights, np.asarray(grid, dtype=np.float64))
    return np.maximum(cam, 0.0)


def grad_cam_scores(vh: VisualEncoder, img: Image, t: np.ndarray,
                    props: ProposalSet, cache: FeatureCache | None = None) -> list[float]:
    """Score proposals by mean activation inside the mask. The gradient
    target is the cosine similarity itself (there is no classifier head
    in the zero-shot setting). Maps are not renormalized: argmax over
    in-mask means is unaffected by a monotone rescale."""
    return mask_mean_scores(activation_map(vh, img, t, cache), props)


def dense_score_map(vh: VisualEncoder, img: Image, t: np.ndarray,
                    cache: FeatureCache | None = None) -> np.ndarray:
    """Per-cell cosine map from the pooling attention's value and output
    projections applied cell-wise (no pooling)."""
    if not isinstance(vh, ResidualVisualEncoder):
        raise SurgeryUnsupported(
            "dense score-map surgery needs a residual backbone exposing its "
            "pooling projections"
        )
    (w_v, b_v), (w_o, b_o) = vh.surgery_projections()
    cache = cache or FeatureCache()
    grid = np.asarray(cache.backbone_grid(vh, img), dtype=np.float64)
    c, h, w = grid.shape
    cells = grid.reshape(c, -1).T
    dense = (cells @ w_v.T + b_v) @ w_o.T + b_o
    tv = np.asarray(t, dtype=np.float64).reshape(-1)
    norms = np.linalg.norm(dense, axis=1) * np.linalg.norm(tv)
    sims = np.where(norms > 1e-12, dense @ tv / np.where(norms > 0, norms, 1.0), 0.0)
    return sims.reshape(h, w)


def score_map_scores(vh: VisualEncoder, img: Image, t: np.ndarray,
                     props: ProposalSet, cache: FeatureCache | None = None) -> list[float]:
    """Scores in the mask area of the dense cosine map, averaged."""
    return mask_mean_scores(dense_score_map(vh, img, t, cache), props)


def region_token_scores(vh: VisualEncoder, img: Image, t: np.ndarray,
                        props: ProposalSet, cache: FeatureCache | None = None) -> list[float]:
    """Token masking applied before every transformer layer; score is
    the cosine between the class token and the text feature."""
    if not isinstance(vh, TransformerVisualEncoder):
        raise SurgeryUnsupported("region tokens need a patch-transformer encoder")
    cache = cache or FeatureCache()
    full_depth = MaskingConfig(mask_layers=vh.layer_count)
    tokens = cache.boundary_tokens(vh, img, vh.layer_count)
    scores: list[float] = []
    for m in props:
        if m.is_empty():
            scores.append(EMPTY_SCORE)
            continue
        gm = resize_mask_to_grid(m, vh.feature_grid_shape)
        feat = token_masked_class_feature(vh, tokens, gm, full_depth)
        scores.append(cosine(t, feat))
    return scores


def cropping_scores(vh: VisualEncoder, img: Image, t: np.ndarray,
                    props: ProposalSet, cache: FeatureCache | None = None) -> list[float]:
    """Crop-and-mask features alone; equals the main pipeline at alpha=0."""
    scores: list[float] = []
    for m in props:
        if m.is_empty():
            scores.append(EMPTY_SCORE)
            continue
        scores.append(cosine(t, local_visual_feature(vh, img, m)))
    return scores


_DISPATCH = {
    BaselineKind.GRAD_CAM: grad_cam_scores,
    BaselineKind.SCORE_MAP: score_map_scores,
    BaselineKind.REGION_TOKEN: region_token_scores,
    BaselineKind.CROPPING: cropping_scores,
}


def baseline_scores(kind: BaselineKind, vh: VisualEncoder, img: Image,
                    t: np.ndarray, props: ProposalSet,
                    cache: FeatureCache | None = None) -> list[float]:
    return _DISPATCH[kind](vh, img, t, props, cache)
