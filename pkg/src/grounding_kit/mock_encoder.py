"""Deterministic mock dual encoder for tests and desk-scale benchmarks.

Construction is pure function of the configured seed:

* text vectors are seeded pseudo-random unit vectors keyed by a stable
  hash of the (possibly truncated) string;
* the residual backbone is a fixed random affine map applied to per-cell
  mean colors of the resized image, pooled by a single-head attention
  with fixed seeded projections;
* the patch transformer is a small pre-norm single-head stack over
  per-patch mean-color embeddings with a class token, exposing per-layer
  stepping around the masking boundary.

Weights never train; every output is a pure function of input bytes and
the seed, so repeated calls are bit-identical.
"""

from __future__ import annotations

import hashlib
import warnings

import numpy as np
from PIL import Image as PILImage

from .core import Image, cosine
from .encoders import (
    ResidualVisualEncoder,
    TextEncoder,
    TransformerVisualEncoder,
)
from .errors import (
    EncoderFailure,
    GradientsUnsupported,
    ShapeMismatch,
    TextTruncationWarning,
)

_PIL_RESAMPLE = {
    "bilinear": PILImage.Resampling.BILINEAR,
    "nearest": PILImage.Resampling.NEAREST,
    "bicubic": PILImage.Resampling.BICUBIC,
}


def _seeded_rng(seed: int, *tags: object) -> np.random.Generator:
    payload = "|".join([str(seed), *map(str, tags)]).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _resize_pixels(img: Image, resolution: int, interpolation: str) -> np.ndarray:
    pil = PILImage.fromarray(img.pixels)
    if pil.size != (resolution, resolution):
        pil = pil.resize((resolution, resolution), _PIL_RESAMPLE[interpolation])
    return np.asarray(pil, dtype=np.float64) / 255.0


def _cell_mean_colors(pixels: np.ndarray, grid_shape: tuple[int, int]) -> np.ndarray:
    """Mean RGB per grid cell, proportional binning; returns (h, w, 3)."""
    H, W = pixels.shape[0], pixels.shape[1]
    gh, gw = grid_shape
    row_edges = (np.arange(gh + 1) * H) // gh
    col_edges = (np.arange(gw + 1) * W) // gw
    out = np.zeros((gh, gw, 3), dtype=np.float64)
    for i in range(gh):
        r0, r1 = row_edges[i], max(row_edges[i + 1], row_edges[i] + 1)
        for j in range(gw):
            c0, c1 = col_edges[j], max(col_edges[j + 1], col_edges[j] + 1)
            out[i, j] = pixels[r0:r1, c0:c1].reshape(-1, 3).mean(axis=0)
    return out


def _augment(cells: np.ndarray) -> np.ndarray:
    """Append a constant channel so the patch maps are affine."""
    ones = np.ones(cells.shape[:-1] + (1,), dtype=np.float64)
    return np.concatenate([cells, ones], axis=-1)


class MockTextEncoder(TextEncoder):
    def __init__(self, seed: int = 0, embed_dim: int = 32, max_token_length: int = 77):
        self.seed = seed
        self.embed_dim = embed_dim
        self.max_token_length = max_token_length

    def encode_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EncoderFailure("cannot encode empty text")
        tokens = text.split()
        if len(tokens) > self.max_token_length:
            warnings.warn(
                f"expression truncated from {len(tokens)} to "
                f"{self.max_token_length} tokens",
                TextTruncationWarning,
                stacklevel=2,
            )
            text = " ".join(tokens[: self.max_token_length])
        rng = _seeded_rng(self.seed, "text", text)
        v = rng.standard_normal(self.embed_dim)
        return v / np.linalg.norm(v)


class MockResidualEncoder(ResidualVisualEncoder):
    """Stride-like residual mock: fixed affine map on per-cell mean
    colors, pooled by single-head attention with seeded projections."""

    def __init__(
        self,
        seed: int = 0,
        input_resolution: int = 224,
        grid_shape: tuple[int, int] = (7, 7),
        embed_dim: int = 32,
        channels: int = 16,
        gradients: bool = True,
        interpolation: str = "bilinear",
        fd_step: float = 1e-5,
    ):
        self.seed = seed
        self.input_resolution = input_resolution
        self.feature_grid_shape = grid_shape
        self.embed_dim = embed_dim
        self.channels = channels
        self.gradients = gradients
        self.interpolation = interpolation
        self.fd_step = fd_step
        rng = _seeded_rng(seed, "residual")
        c = channels
        self.w_patch = rng.standard_normal((c, 4)) / 2.0
        self.w_q = rng.standard_normal((c, c)) / np.sqrt(c)
        self.b_q = rng.standard_normal(c) * 0.1
        self.w_k = rng.standard_normal((c, c)) / np.sqrt(c)
        self.b_k = rng.standard_normal(c) * 0.1
        self.w_v = rng.standard_normal((c, c)) / np.sqrt(c)
        self.b_v = rng.standard_normal(c) * 0.1
        self.w_o = rng.standard_normal((embed_dim, c)) / np.sqrt(c)
        self.b_o = rng.standard_normal(embed_dim) * 0.1

    def describe(self) -> dict:
        d = super().describe()
        d.update(
            weights="mock",
            seed=self.seed,
            channels=self.channels,
            gradients=self.gradients,
            interpolation=self.interpolation,
        )
        return d

    def backbone_features(self, img: Image) -> np.ndarray:
        pixels = _resize_pixels(img, self.input_resolution, self.interpolation)
        cells = _augment(_cell_mean_colors(pixels, self.feature_grid_shape))
        grid = np.einsum("cf,ijf->cij", self.w_patch, cells)
        return grid

    def _check_grid(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.float64)
        expected = (self.channels, *self.feature_grid_shape)
        if grid.shape != expected:
            raise ShapeMismatch(f"grid shape {grid.shape} != {expected}")
        return grid

    def attention_pool(self, state: np.ndarray) -> np.ndarray:
        grid = self._check_grid(state)
        query_cell = grid.mean(axis=(1, 2))
        return self.attention_pool_with_query(grid, query_cell)

    def attention_pool_with_query(self, grid: np.ndarray, query_cell: np.ndarray) -> np.ndarray:
        grid = self._check_grid(grid)
        x = grid.reshape(self.channels, -1).T
        q = self.w_q @ np.asarray(query_cell, dtype=np.float64) + self.b_q
        k = x @ self.w_k.T + self.b_k
        v = x @ self.w_v.T + self.b_v
        attn = _softmax(k @ q / np.sqrt(self.channels))
        pooled = attn @ v
        return self.w_o @ pooled + self.b_o

    def encode_image(self, img: Image) -> np.ndarray:
        return self.attention_pool(self.backbone_features(img))

    def similarity_gradient(self, img: Image, t: np.ndarray) -> np.ndarray:
        """Central-difference fallback gradient over every grid entry."""
        if not self.gradients:
            raise GradientsUnsupported("gradient support disabled in adapter config")
        grid = self.backbone_features(img)
        step = self.fd_step
        grad = np.zeros_like(grid)
        for idx in np.ndindex(grid.shape):
            saved = grid[idx]
            grid[idx] = saved + step
            hi = cosine(self.attention_pool(grid), t)
            grid[idx] = saved - step
            lo = cosine(self.attention_pool(grid), t)
            grid[idx] = saved
            grad[idx] = (hi - lo) / (2.0 * step)
        return grad

    def surgery_projections(self):
        return (self.w_v, self.b_v), (self.w_o, self.b_o)


class _TransformerLayer:
    def __init__(self, rng: np.random.Generator, width: int):
        scale = 1.0 / np.sqrt(width)
        self.ln1_g = 1.0 + 0.05 * rng.standard_normal(width)
        self.ln1_b = 0.05 * rng.standard_normal(width)
        self.w_q = rng.standard_normal((width, width)) * scale
        self.b_q = rng.standard_normal(width) * 0.02
        self.w_k = rng.standard_normal((width, width)) * scale
        self.b_k = rng.standard_normal(width) * 0.02
        self.w_v = rng.standard_normal((width, width)) * scale
        self.b_v = rng.standard_normal(width) * 0.02
        self.w_ao = rng.standard_normal((width, width)) * scale * 0.5
        self.b_ao = rng.standard_normal(width) * 0.02
        self.ln2_g = 1.0 + 0.05 * rng.standard_normal(width)
        self.ln2_b = 0.05 * rng.standard_normal(width)
        hidden = 2 * width
        self.w_m1 = rng.standard_normal((hidden, width)) * scale
        self.b_m1 = rng.standard_normal(hidden) * 0.02
        self.w_m2 = rng.standard_normal((width, hidden)) / np.sqrt(hidden) * 0.5
        self.b_m2 = rng.standard_normal(width) * 0.02
        self.width = width

    def apply(self, tokens: np.ndarray) -> np.ndarray:
        y = _layer_norm(tokens, self.ln1_g, self.ln1_b)
        q = y @ self.w_q.T + self.b_q
        k = y @ self.w_k.T + self.b_k
        v = y @ self.w_v.T + self.b_v
        attn = _softmax(q @ k.T / np.sqrt(self.width), axis=-1)
        tokens = tokens + (attn @ v) @ self.w_ao.T + self.b_ao
        y = _layer_norm(tokens, self.ln2_g, self.ln2_b)
        tokens = tokens + np.tanh(y @ self.w_m1.T + self.b_m1) @ self.w_m2.T + self.b_m2
        return tokens


class MockTransformerEncoder(TransformerVisualEncoder):
    """Small pre-norm single-head transformer mock with a class token."""

    def __init__(
        self,
        seed: int = 0,
        input_resolution: int = 224,
        grid_shape: tuple[int, int] = (7, 7),
        embed_dim: int = 32,
        width: int = 32,
        layer_count: int = 4,
        mask_layers_default: int = 3,
        interpolation: str = "bilinear",
    ):
        if not (0 <= mask_layers_default <= layer_count):
            raise EncoderFailure(
                f"mask_layers_default={mask_layers_default} outside [0, {layer_count}]"
            )
        self.seed = seed
        self.input_resolution = input_resolution
        self.feature_grid_shape = grid_shape
        self.embed_dim = embed_dim
        self.width = width
        self.layer_count = layer_count
        self.mask_layers_default = mask_layers_default
        self.interpolation = interpolation
        rng = _seeded_rng(seed, "vit")
        n = grid_shape[0] * grid_shape[1]
        self.w_embed = rng.standard_normal((width, 4)) / 2.0
        self.cls_token = rng.standard_normal(width) * 0.5
        self.positional = rng.standard_normal((n + 1, width)) * 0.5
        self.layers = [_TransformerLayer(rng, width) for _ in range(layer_count)]
        self.lnf_g = 1.0 + 0.05 * rng.standard_normal(width)
        self.lnf_b = 0.05 * rng.standard_normal(width)
        self.w_proj = rng.standard_normal((embed_dim, width)) / np.sqrt(width)
        self.b_proj = rng.standard_normal(embed_dim) * 0.1

    def describe(self) -> dict:
        d = super().describe()
        d.update(
            weights="mock",
            seed=self.seed,
            width=self.width,
            layer_count=self.layer_count,
            mask_layers_default=self.mask_layers_default,
            interpolation=self.interpolation,
        )
        return d

    def _embed(self, img: Image) -> np.ndarray:
        pixels = _resize_pixels(img, self.input_resolution, self.interpolation)
        cells = _augment(_cell_mean_colors(pixels, self.feature_grid_shape))
        patches = cells.reshape(-1, 4) @ self.w_embed.T
        tokens = np.vstack([self.cls_token[None, :], patches])
        return tokens + self.positional

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.float64)
        n = self.feature_grid_shape[0] * self.feature_grid_shape[1]
        if tokens.shape != (n + 1, self.width):
            raise ShapeMismatch(f"token state shape {tokens.shape} != {(n + 1, self.width)}")
        return tokens

    def forward_prefix(self, img: Image, mask_layers: int) -> np.ndarray:
        if not (0 <= mask_layers <= self.layer_count):
            raise EncoderFailure(
                f"mask_layers={mask_layers} outside [0, {self.layer_count}]"
            )
        tokens = self._embed(img)
        for i in range(self.layer_count - mask_layers):
            tokens = self.layers[i].apply(tokens)
        return tokens

    def forward_layer(self, tokens: np.ndarray, layer_index: int) -> np.ndarray:
        if not (0 <= layer_index < self.layer_count):
            raise EncoderFailure(f"layer index {layer_index} out of range")
        return self.layers[layer_index].apply(self._check_tokens(tokens))

    def project_class_token(self, tokens: np.ndarray) -> np.ndarray:
        tokens = self._check_tokens(tokens)
        cls = _layer_norm(tokens[0], self.lnf_g, self.lnf_b)
        return self.w_proj @ cls + self.b_proj

    def backbone_features(self, img: Image) -> np.ndarray:
        return self.forward_prefix(img, self.mask_layers_default)

    def attention_pool(self, state: np.ndarray) -> np.ndarray:
        tokens = self._check_tokens(state)
        for i in range(self.layer_count - self.mask_layers_default, self.layer_count):
            tokens = self.layers[i].apply(tokens)
        return self.project_class_token(tokens)

    def encode_image(self, img: Image) -> np.ndarray:
        return self.project_class_token(self.forward_prefix(img, 0))
