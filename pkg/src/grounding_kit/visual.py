"""Mask-guided visual features.

The global-context path pools whole-image backbone state restricted to a
proposal: residual encoders zero out-of-mask grid cells before the
pooling attention computes query/key/value (the query is the mean over
in-mask cells); patch transformers zero out-of-mask grid tokens before
each of the last k layers and read the class token. The local-context
path encodes the background-zeroed, cropped-to-mask image. The two are
combined by a constant-weight fusion.

Backbone state is cached per image so scoring many proposals on one
image runs the expensive part once; set ``GROUNDING_KIT_CACHE`` to also
persist it on disk.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Image, MaskProposal, fuse
from .encoders import (
    ResidualVisualEncoder,
    TransformerVisualEncoder,
    VisualEncoder,
)
from .errors import EmptyMask, EncoderFailure, ShapeMismatch

BoundaryHook = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MaskingConfig:
    """Knobs for the global-context path.

    ``mask_layers`` is k, the number of final transformer layers whose
    inputs are masked. ``reapply_per_layer`` keeps re-zeroing out-of-mask
    tokens before every masking layer (the single-application variant
    exists for ablation; it lets masked tokens regenerate).
    ``pool_query_full_grid`` divides the residual pooling query by the
    full grid size instead of the in-mask cell count.
    """

    mask_layers: int = 3
    reapply_per_layer: bool = True
    pool_query_full_grid: bool = False

    def __post_init__(self):
        if self.mask_layers < 0:
            raise ValueError(f"mask_layers must be >= 0, got {self.mask_layers}")


@dataclass(frozen=True)
class CropSpec:
    """A bounding box (row0, col0, row1, col1; exclusive ends) plus the
    square-padding rule applied after extraction."""

    bbox: tuple[int, int, int, int]
    pad_to_square: bool = True
    fill_value: int = 0

    def __post_init__(self):
        r0, c0, r1, c1 = self.bbox
        if r1 <= r0 or c1 <= c0:
            raise ShapeMismatch(f"degenerate crop bbox {self.bbox}")


@dataclass(frozen=True)
class VisualFeatures:
    """Fused visual feature with its global/local breakdown."""

    fused: np.ndarray
    global_context: np.ndarray
    local_context: np.ndarray


def grid_bin_edges(total: int, bins: int) -> np.ndarray:
    """Proportional binning edges dividing ``total`` pixels into ``bins``."""
    return (np.arange(bins + 1) * total) // bins


def resize_mask_to_grid(m: MaskProposal, grid_shape: tuple[int, int]) -> np.ndarray:
    """Bin a pixel mask down to the feature grid with an any-overlap rule.

    A cell is set iff any pixel of the mask inside it is set, so a
    nonempty mask never produces an all-zero grid (a coverage-threshold
    rule would erase thin instances at coarse strides).
    """
    if m.is_empty():
        raise EmptyMask("cannot resize a mask with no foreground pixels")
    H, W = m.shape
    gh, gw = int(grid_shape[0]), int(grid_shape[1])
    row_edges = grid_bin_edges(H, gh)
    col_edges = grid_bin_edges(W, gw)
    out = np.zeros((gh, gw), dtype=np.uint8)
    for i in range(gh):
        r0, r1 = row_edges[i], max(row_edges[i + 1], row_edges[i] + 1)
        for j in range(gw):
            c0, c1 = col_edges[j], max(col_edges[j + 1], col_edges[j] + 1)
            if m.bits[r0:r1, c0:c1].any():
                out[i, j] = 1
    return out


class FeatureCache:
    """Per-image backbone-state cache, thread-safe, optionally disk-backed.

    Keys combine the adapter fingerprint, a content hash of the pixels,
    and (for transformers) the masking boundary. Cached arrays are
    returned read-only; callers copy before mutating.
    """

    def __init__(self, cache_dir: str | None = None):
        if cache_dir is None:
            cache_dir = os.environ.get("GROUNDING_KIT_CACHE") or None
        self.cache_dir = cache_dir
        self._mem: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _content_hash(img: Image) -> str:
        digest = hashlib.sha256()
        digest.update(str(img.pixels.shape).encode())
        digest.update(img.pixels.tobytes())
        return digest.hexdigest()[:16]

    def _key(self, encoder: VisualEncoder, img: Image, tag: str) -> str:
        return f"{encoder.cache_key}_{self._content_hash(img)}_{tag}"

    def _fetch(self, key: str) -> np.ndarray | None:
        with self._lock:
            if key in self._mem:
                return self._mem[key]
        if self.cache_dir:
            path = os.path.join(self.cache_dir, key + ".npy")
            if os.path.exists(path):
                arr = np.load(path)
                arr.setflags(write=False)
                with self._lock:
                    self._mem[key] = arr
                return arr
        return None

    def _store(self, key: str, arr: np.ndarray) -> np.ndarray:
        arr.setflags(write=False)
        with self._lock:
            self._mem[key] = arr
        if self.cache_dir:
            os.makedirs(self.cache_dir, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".npy.tmp")
            try:
                with os.fdopen(fd, "wb") as f:
                    np.save(f, arr)
                os.replace(tmp, os.path.join(self.cache_dir, key + ".npy"))
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return arr

    def backbone_grid(self, encoder: ResidualVisualEncoder, img: Image) -> np.ndarray:
        key = self._key(encoder, img, "grid")
        cached = self._fetch(key)
        if cached is not None:
            return cached
        return self._store(key, encoder.backbone_features(img))

    def boundary_tokens(
        self, encoder: TransformerVisualEncoder, img: Image, mask_layers: int
    ) -> np.ndarray:
        key = self._key(encoder, img, f"tok{mask_layers}")
        cached = self._fetch(key)
        if cached is not None:
            return cached
        return self._store(key, encoder.forward_prefix(img, mask_layers))


def masked_attention_pool(
    encoder: ResidualVisualEncoder,
    grid: np.ndarray,
    grid_mask: np.ndarray,
    *,
    full_grid_query: bool = False,
) -> np.ndarray:
    """Pool a backbone grid restricted to a grid mask.

    Out-of-mask cells are zeroed before query, key, and value are
    computed, so the output depends only on in-mask cells. The query is
    the mean over in-mask cells (or over the full grid size when
    ``full_grid_query`` is set, which scales it with mask area).
    """
    grid = np.asarray(grid, dtype=np.float64)
    gm = (np.asarray(grid_mask) != 0)
    if grid.ndim != 3 or grid.shape[1:] != gm.shape:
        raise ShapeMismatch(f"grid {grid.shape} does not match grid mask {gm.shape}")
    n_in = int(gm.sum())
    if n_in == 0:
        raise EmptyMask("grid mask has no cells set")
    masked = grid * gm[None, :, :]
    denom = gm.size if full_grid_query else n_in
    query_cell = masked.sum(axis=(1, 2)) / denom
    return encoder.attention_pool_with_query(masked, query_cell)


def token_masked_class_feature(
    encoder: TransformerVisualEncoder,
    boundary_tokens: np.ndarray,
    grid_mask: np.ndarray,
    cfg: MaskingConfig,
    *,
    boundary_hook: BoundaryHook | None = None,
) -> np.ndarray:
    """Run the last ``cfg.mask_layers`` layers with out-of-mask grid
    tokens zeroed at each layer input; return the projected class token.

    The class token is never masked. ``boundary_hook``, when given, is a
    diagnostic seam invoked with (layer_index, tokens) before each
    masking step; it must return the (possibly perturbed) token state.
    With ``mask_layers=0`` this is exactly the vanilla forward pass.
    """
    k = cfg.mask_layers
    if k > encoder.layer_count:
        raise EncoderFailure(
            f"mask_layers={k} exceeds encoder layer count {encoder.layer_count}"
        )
    tokens = np.array(boundary_tokens, dtype=np.float64)
    gm = (np.asarray(grid_mask) != 0).reshape(-1)
    if gm.size != tokens.shape[0] - 1:
        raise ShapeMismatch(
            f"grid mask ({gm.size} cells) does not match {tokens.shape[0] - 1} grid tokens"
        )
    if k > 0 and not gm.any():
        raise EmptyMask("grid mask has no cells set")
    out_of_mask = np.flatnonzero(~gm) + 1
    for step, layer_index in enumerate(range(encoder.layer_count - k, encoder.layer_count)):
        if boundary_hook is not None:
            tokens = np.asarray(boundary_hook(layer_index, tokens), dtype=np.float64)
        if step == 0 or cfg.reapply_per_layer:
            tokens[out_of_mask, :] = 0.0
        tokens = encoder.forward_layer(tokens, layer_index)
    return encoder.project_class_token(tokens)


def global_visual_feature(
    encoder: VisualEncoder,
    img: Image,
    m: MaskProposal,
    cfg: MaskingConfig = MaskingConfig(),
    cache: FeatureCache | None = None,
    *,
    boundary_hook: BoundaryHook | None = None,
) -> np.ndarray:
    """Global-context feature of a mask: whole-image backbone state,
    pooled with surrounding context restricted to the proposal."""
    if m.is_empty():
        raise EmptyMask("global feature of an empty mask is undefined")
    if m.shape != img.shape:
        raise ShapeMismatch(f"mask shape {m.shape} != image shape {img.shape}")
    cache = cache or FeatureCache()
    grid_mask = resize_mask_to_grid(m, encoder.feature_grid_shape)
    if isinstance(encoder, TransformerVisualEncoder):
        tokens = cache.boundary_tokens(encoder, img, cfg.mask_layers)
        return token_masked_class_feature(
            encoder, tokens, grid_mask, cfg, boundary_hook=boundary_hook
        )
    if isinstance(encoder, ResidualVisualEncoder):
        grid = cache.backbone_grid(encoder, img)
        return masked_attention_pool(
            encoder, grid, grid_mask, full_grid_query=cfg.pool_query_full_grid
        )
    raise EncoderFailure(f"unsupported encoder kind {encoder.kind!r}")


def mask_bbox(m: MaskProposal) -> tuple[int, int, int, int]:
    """Tight bounding box (row0, col0, row1, col1; exclusive ends)."""
    if m.is_empty():
        raise EmptyMask("bounding box of an empty mask is undefined")
    rows = np.flatnonzero(m.bits.any(axis=1))
    cols = np.flatnonzero(m.bits.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def crop_spec_for_mask(m: MaskProposal, fill_value: int = 0) -> CropSpec:
    return CropSpec(bbox=mask_bbox(m), pad_to_square=True, fill_value=fill_value)


def crop_to_mask(img: Image, m: MaskProposal) -> Image:
    """Zero the background, crop to the mask's tight box, pad to square.

    Padding is centered with the extra row/column on the bottom/right,
    filled with zeros to stay consistent with the background zeroing.
    """
    if m.shape != img.shape:
        raise ShapeMismatch(f"mask shape {m.shape} != image shape {img.shape}")
    spec = crop_spec_for_mask(m)
    r0, c0, r1, c1 = spec.bbox
    masked = img.pixels * m.bits[:, :, None]
    crop = masked[r0:r1, c0:c1]
    if spec.pad_to_square:
        h, w = crop.shape[:2]
        side = max(h, w)
        if side != h or side != w:
            padded = np.full((side, side, 3), spec.fill_value, dtype=np.uint8)
            top = (side - h) // 2
            left = (side - w) // 2
            padded[top : top + h, left : left + w] = crop
            crop = padded
    return Image(pixels=crop, id=f"{img.id}#crop{spec.bbox}")


def local_visual_feature(encoder: VisualEncoder, img: Image, m: MaskProposal) -> np.ndarray:
    """Local-context feature: encode the cropped, background-zeroed mask
    region (the adapter resizes it to its input resolution)."""
    if m.is_empty():
        raise EmptyMask("local feature of an empty mask is undefined")
    return encoder.encode_image(crop_to_mask(img, m))


def global_local_visual_feature(
    encoder: VisualEncoder,
    img: Image,
    m: MaskProposal,
    alpha: float,
    cfg: MaskingConfig = MaskingConfig(),
    cache: FeatureCache | None = None,
) -> VisualFeatures:
    """Constant-weight fusion of the global and local context features,
    keeping the breakdown for diagnostics."""
    f_global = global_visual_feature(encoder, img, m, cfg, cache)
    f_local = local_visual_feature(encoder, img, m)
    return VisualFeatures(
        fused=fuse(f_global, f_local, alpha),
        global_context=f_global,
        local_context=f_local,
    )
