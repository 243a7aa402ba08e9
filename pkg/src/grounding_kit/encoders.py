"""Adapter interfaces to a pretrained contrastively-aligned dual encoder.

The visual side exposes the internal seams the mask-guided feature
extraction needs: the backbone/pooling split for residual encoders, and
per-layer stepping around a masking boundary for patch transformers.
Adapters are read-only after construction and declare whether concurrent
invocation is safe.

Configuration is a flat key-value JSON document; ``build_encoders`` turns
it into a (visual, text) adapter pair sharing one embedding dimension.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod

import numpy as np

from .core import Image
from .errors import EncoderFailure, GradientsUnsupported, SchemaError, SurgeryUnsupported

RESIDUAL_BACKBONE = "residual_backbone"
PATCH_TRANSFORMER = "patch_transformer"

_INTERPOLATIONS = ("bilinear", "nearest", "bicubic")


class VisualEncoder(ABC):
    """Visual half of the dual encoder.

    ``backbone_features`` returns the pre-pooling state: a (C, h, w) grid
    for residual backbones, or the (1 + h*w, width) token state entering
    the masking boundary for patch transformers. ``attention_pool`` maps
    that state to the encoder's standard pooled embedding, so the
    composition reproduces ``encode_image``.
    """

    kind: str
    input_resolution: int
    feature_grid_shape: tuple[int, int]
    embed_dim: int
    concurrent_safe: bool = True

    @abstractmethod
    def backbone_features(self, img: Image) -> np.ndarray: ...

    @abstractmethod
    def attention_pool(self, state: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def encode_image(self, img: Image) -> np.ndarray: ...

    def similarity_gradient(self, img: Image, t: np.ndarray) -> np.ndarray:
        """d cosine(encode_image(img), t) / d backbone_features(img)."""
        raise GradientsUnsupported(f"{type(self).__name__} provides no gradients")

    def describe(self) -> dict:
        """Resolved configuration, embedded in reports for reproducibility."""
        return {
            "kind": self.kind,
            "input_resolution": self.input_resolution,
            "feature_grid_shape": list(self.feature_grid_shape),
            "embed_dim": self.embed_dim,
        }

    @property
    def cache_key(self) -> str:
        payload = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class ResidualVisualEncoder(VisualEncoder):
    """Residual-backbone encoders add a query seam on the pooling
    attention and (optionally) projection-weight access for dense
    score-map surgery."""

    kind = RESIDUAL_BACKBONE

    @abstractmethod
    def attention_pool_with_query(
        self, grid: np.ndarray, query_cell: np.ndarray
    ) -> np.ndarray:
        """Run the pooling attention with a caller-supplied query cell
        (a C-vector in grid space); keys and values come from ``grid``."""

    def surgery_projections(
        self,
    ) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
        """(value projection, output projection) as (weight, bias) pairs,
        for per-cell application to the backbone grid."""
        raise SurgeryUnsupported(f"{type(self).__name__} exposes no projection weights")


class TransformerVisualEncoder(VisualEncoder):
    """Patch-transformer encoders expose per-layer stepping so callers
    can zero grid tokens between layers. Token index 0 is the class
    token; grid token (i, j) sits at index 1 + i*w + j."""

    kind = PATCH_TRANSFORMER
    layer_count: int
    mask_layers_default: int

    @abstractmethod
    def forward_prefix(self, img: Image, mask_layers: int) -> np.ndarray:
        """Token state entering the first of the last ``mask_layers``
        layers (the full forward pass when ``mask_layers=0``)."""

    @abstractmethod
    def forward_layer(self, tokens: np.ndarray, layer_index: int) -> np.ndarray: ...

    @abstractmethod
    def project_class_token(self, tokens: np.ndarray) -> np.ndarray: ...


class TextEncoder(ABC):
    """Text half of the dual encoder; over-long inputs are truncated
    with a warning rather than rejected."""

    embed_dim: int
    max_token_length: int

    @abstractmethod
    def encode_text(self, text: str) -> np.ndarray: ...


_DEFAULTS = {
    "weights": "mock",
    "input_resolution": 224,
    "embed_dim": 32,
    "layer_count": 4,
    "gradients": True,
    "seed": 0,
    "interpolation": "bilinear",
    "max_token_length": 77,
}


def load_encoder_config(path: str) -> dict:
    """Read and validate a flat key-value adapter configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise SchemaError("encoder config not found", path=path) from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}", path=path) from e
    if not isinstance(cfg, dict):
        raise SchemaError("encoder config must be a flat object", path=path)
    return validate_encoder_config(cfg, path=path)


def validate_encoder_config(cfg: dict, path: str | None = None) -> dict:
    merged = dict(_DEFAULTS)
    merged.update(cfg)
    kind = merged.get("kind")
    if kind not in (RESIDUAL_BACKBONE, PATCH_TRANSFORMER):
        raise SchemaError(
            f"encoder kind must be '{RESIDUAL_BACKBONE}' or '{PATCH_TRANSFORMER}', got {kind!r}",
            path=path,
            key="kind",
        )
    if merged["interpolation"] not in _INTERPOLATIONS:
        raise SchemaError(
            f"interpolation must be one of {_INTERPOLATIONS}", path=path, key="interpolation"
        )
    if "grid_shape" not in merged:
        stride = 32
        side = int(merged["input_resolution"]) // stride
        merged["grid_shape"] = [side, side]
    return merged


def build_encoders(cfg: dict) -> tuple[VisualEncoder, TextEncoder]:
    """Instantiate the (visual, text) adapter pair described by ``cfg``.

    ``weights: "mock"`` builds the deterministic test encoders; anything
    else would need a registered real adapter.
    """
    from . import mock_encoder

    cfg = validate_encoder_config(cfg)
    if cfg["weights"] != "mock":
        raise EncoderFailure(
            f"no adapter registered for weights={cfg['weights']!r}; "
            "this build ships the deterministic mock adapters only"
        )
    text = mock_encoder.MockTextEncoder(
        seed=int(cfg["seed"]),
        embed_dim=int(cfg["embed_dim"]),
        max_token_length=int(cfg["max_token_length"]),
    )
    grid_shape = (int(cfg["grid_shape"][0]), int(cfg["grid_shape"][1]))
    if cfg["kind"] == RESIDUAL_BACKBONE:
        visual: VisualEncoder = mock_encoder.MockResidualEncoder(
            seed=int(cfg["seed"]),
            input_resolution=int(cfg["input_resolution"]),
            grid_shape=grid_shape,
            embed_dim=int(cfg["embed_dim"]),
            gradients=bool(cfg["gradients"]),
            interpolation=str(cfg["interpolation"]),
        )
    else:
        visual = mock_encoder.MockTransformerEncoder(
            seed=int(cfg["seed"]),
            input_resolution=int(cfg["input_resolution"]),
            grid_shape=grid_shape,
            embed_dim=int(cfg["embed_dim"]),
            layer_count=int(cfg["layer_count"]),
            mask_layers_default=int(cfg.get("mask_layers", 3)),
            interpolation=str(cfg["interpolation"]),
        )
    return visual, text
