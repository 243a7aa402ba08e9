"""File-based visual outputs: chosen-mask overlays and ablation plots.

Everything is written as static lossless PNG; the consumers are batch
evaluators, not interactive viewers.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image as PILImage

from .core import Image, MaskProposal
from .errors import ShapeMismatch

MASK_COLOR = (46, 204, 113)
OUTLINE_COLOR = (20, 90, 50)


def render_overlay(
    img: Image,
    mask: MaskProposal,
    color: tuple[int, int, int] = MASK_COLOR,
    opacity: float = 0.5,
) -> np.ndarray:
    """Blend the mask color over the masked pixels and draw a 1-pixel
    boundary; returns an H x W x 3 uint8 array."""
    if mask.shape != img.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != image shape {img.shape}")
    out = img.pixels.astype(np.float64)
    sel = mask.bits.astype(bool)
    tint = np.asarray(color, dtype=np.float64)
    out[sel] = (1.0 - opacity) * out[sel] + opacity * tint
    edge = _boundary(mask.bits)
    out[edge] = np.asarray(OUTLINE_COLOR, dtype=np.float64)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _boundary(bits: np.ndarray) -> np.ndarray:
    inner = bits.astype(bool)
    eroded = inner.copy()
    eroded[1:, :] &= inner[:-1, :]
    eroded[:-1, :] &= inner[1:, :]
    eroded[:, 1:] &= inner[:, :-1]
    eroded[:, :-1] &= inner[:, 1:]
    return inner & ~eroded


def save_overlay_png(img: Image, mask: MaskProposal, path: str) -> None:
    pixels = render_overlay(img, mask)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    PILImage.fromarray(pixels).save(tmp, format="PNG")
    os.replace(tmp, path)


def save_ablation_plot(rows: list[dict], path: str, title: str | None = None) -> None:
    """Line plot of oIoU and mIoU against the swept parameter."""
    if not rows:
        raise ValueError("no ablation rows to plot")
    axis = rows[0]["axis"]
    xs = [r["value"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [r["oiou"] for r in rows], marker="o", label="oIoU")
    ax.plot(xs, [r["miou"] for r in rows], marker="s", label="mIoU")
    ax.set_xlabel(axis)
    ax.set_ylabel("metric")
    ax.set_title(title or f"metrics vs {axis}")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    fig.savefig(tmp, format="png", dpi=120)
    plt.close(fig)
    os.replace(tmp, path)
