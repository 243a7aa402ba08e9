"""Shared fixtures: mock encoder pairs and a synthetic benchmark scene
(images, proposals, records, parses written as real files)."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image as PILImage

from grounding_kit.core import Image, MaskProposal
from grounding_kit.encoders import build_encoders
from grounding_kit.maskio import EvalRecord, rle_encode, save_proposals, save_records
from grounding_kit.core import ProposalSet
from grounding_kit.maskio import dump_json_atomic

MOCK_SEED = 11


@pytest.fixture(scope="session")
def residual_pair():
    return build_encoders({"kind": "residual_backbone", "seed": MOCK_SEED})


@pytest.fixture(scope="session")
def vit_pair():
    return build_encoders({"kind": "patch_transformer", "seed": MOCK_SEED})


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_image(rng: np.random.Generator, h: int = 64, w: int = 64, image_id: str = "img") -> Image:
    return Image(pixels=rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8), id=image_id)


@pytest.fixture
def image(rng) -> Image:
    return random_image(rng)


def rect_mask(h: int, w: int, r0: int, c0: int, r1: int, c1: int) -> MaskProposal:
    bits = np.zeros((h, w), dtype=np.uint8)
    bits[r0:r1, c0:c1] = 1
    return MaskProposal(bits=bits)


_EXPRESSIONS = [
    ("the red box", [("the", "DET", 2, "det"), ("red", "ADJ", 2, "amod"),
                     ("box", "NOUN", 2, "ROOT")], [[0, 3]]),
    ("box on the left", [("box", "NOUN", 0, "ROOT"), ("on", "ADP", 0, "prep"),
                         ("the", "DET", 3, "det"), ("left", "NOUN", 1, "pobj")],
     [[0, 1], [2, 4]]),
    ("small square near the corner", [("small", "ADJ", 1, "amod"),
                                      ("square", "NOUN", 1, "ROOT"),
                                      ("near", "ADP", 1, "prep"),
                                      ("the", "DET", 4, "det"),
                                      ("corner", "NOUN", 2, "pobj")],
     [[0, 2], [3, 5]]),
    ("the bright patch at the top", [("the", "DET", 2, "det"),
                                     ("bright", "ADJ", 2, "amod"),
                                     ("patch", "NOUN", 2, "ROOT"),
                                     ("at", "ADP", 2, "prep"),
                                     ("the", "DET", 5, "det"),
                                     ("top", "NOUN", 3, "pobj")],
     [[0, 3], [4, 6]]),
    ("a dark region", [("a", "DET", 2, "det"), ("dark", "ADJ", 2, "amod"),
                       ("region", "NOUN", 2, "ROOT")], [[0, 3]]),
]

_CLASSES = ["box", "square", "patch", "region", "blob"]


def build_scene(root, n_images: int = 3, proposals_per_image: int = 3, seed: int = 5,
                with_classes: bool = True, with_parses: bool = True) -> dict:
    """Write a self-consistent mock benchmark (images, proposals, records,
    parses) under ``root`` and return the file paths plus a config dict."""
    rng = np.random.default_rng(seed)
    image_dir = root / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    h = w = 64

    proposal_sets: dict[str, ProposalSet] = {}
    records: list[EvalRecord] = []
    parses = []
    for i in range(n_images):
        image_id = f"img{i}"
        pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        masks = []
        for _ in range(proposals_per_image):
            r0 = int(rng.integers(0, h - 16))
            c0 = int(rng.integers(0, w - 16))
            rh = int(rng.integers(8, 24))
            cw = int(rng.integers(8, 24))
            m = rect_mask(h, w, r0, c0, min(h, r0 + rh), min(w, c0 + cw))
            # paint each proposal region so features depend on the mask
            pixels[m.bits.astype(bool)] = rng.integers(0, 256, size=3, dtype=np.uint8)
            masks.append(m)
        PILImage.fromarray(pixels).save(image_dir / f"{image_id}.png")
        proposal_sets[image_id] = ProposalSet(proposals=tuple(masks), image_id=image_id)

        gt_index = int(rng.integers(0, proposals_per_image))
        expr, toks, chunks = _EXPRESSIONS[i % len(_EXPRESSIONS)]
        records.append(
            EvalRecord(
                image_id=image_id,
                image_path=f"images/{image_id}.png",
                expression=expr,
                gt_mask=rle_encode(masks[gt_index]),
                object_class=_CLASSES[i % len(_CLASSES)] if with_classes else None,
            )
        )
        if with_parses:
            parses.append(
                {
                    "expression": expr,
                    "tree": {
                        "tokens": [
                            {"i": j, "text": t, "pos": p, "head": hd, "dep": d}
                            for j, (t, p, hd, d) in enumerate(toks)
                        ],
                        "chunks": chunks,
                    },
                }
            )

    proposals_path = root / "proposals.json"
    records_path = root / "records.json"
    save_proposals(proposal_sets, str(proposals_path))
    save_records(records, str(records_path))
    paths = {
        "records": str(records_path),
        "proposals": str(proposals_path),
        "image_dir": str(image_dir),
    }
    if with_parses:
        parses_path = root / "parses.json"
        dump_json_atomic({"parses": parses}, str(parses_path))
        paths["parses"] = str(parses_path)
    return paths


@pytest.fixture
def scene(tmp_path):
    return build_scene(tmp_path)


def scene_config(paths: dict, **overrides) -> dict:
    cfg = {
        "records": paths["records"],
        "proposals": paths["proposals"],
        "parses": paths.get("parses"),
        "encoder_config": {"kind": "patch_transformer", "seed": MOCK_SEED},
        "alpha": 0.7,
        "beta": 0.5,
        "mask_layers": 3,
    }
    cfg.update(overrides)
    return cfg
