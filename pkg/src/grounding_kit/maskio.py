"""Bit-exact ingestion and serialization of masks, proposal files, and
benchmark records.

The canonical mask interchange format is uncompressed column-major RLE:
``counts`` lists alternating run lengths over the Fortran-order flattened
mask, the first run counting leading zeros (possibly 0). This matches the
dominant instance-mask tooling conventions for proposal files.

Ground-truth annotations may also be given as polygons; those are
rasterized at load time with an even-odd fill rule sampled at pixel
centers (documented here because the rule affects IoU at mask boundaries).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .core import GROUND_TRUTH, MaskProposal, ProposalSet
from .errors import MalformedRle, SchemaError, ShapeMismatch


@dataclass(frozen=True)
class RleMask:
    """Column-major uncompressed run-length encoding of a binary mask."""

    size: tuple[int, int]
    counts: tuple[int, ...]

    def __post_init__(self):
        h, w = self.size
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "size", (int(h), int(w)))
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise MalformedRle(f"negative run length in {counts[:8]}...")
        total = sum(counts)
        if total != int(h) * int(w):
            raise MalformedRle(
                f"counts sum {total} != H*W = {int(h) * int(w)} for size {self.size}"
            )

    def to_json(self) -> dict:
        return {"size": [self.size[0], self.size[1]], "counts": list(self.counts)}


def rle_encode(m: MaskProposal) -> RleMask:
    """Encode a binary mask into column-major RLE."""
    flat = m.bits.flatten(order="F")
    n = flat.shape[0]
    if n == 0:
        return RleMask(size=m.shape, counts=(0,))
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], boundaries, [n]))
    counts = np.diff(edges).tolist()
    if flat[0] == 1:
        counts.insert(0, 0)
    return RleMask(size=m.shape, counts=tuple(counts))


def rle_decode(r: RleMask, *, source: str = GROUND_TRUTH) -> MaskProposal:
    """Decode column-major RLE back into a binary mask, bit-exactly."""
    h, w = r.size
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for c in r.counts:
        if value:
            flat[pos : pos + c] = 1
        pos += c
        value ^= 1
    return MaskProposal(bits=flat.reshape((h, w), order="F"), source=source)


def polygons_to_mask(polygons: list[list[float]], size: tuple[int, int]) -> np.ndarray:
    """Rasterize polygon rings into an H x W binary grid.

    Uses the even-odd rule sampled at pixel centers (x = col + 0.5,
    y = row + 0.5); overlapping rings carve holes.
    """
    h, w = int(size[0]), int(size[1])
    # flips[r, k] marks a parity flip applied to columns [0, k) of row r
    flips = np.zeros((h, w + 1), dtype=np.int64)
    for ring in polygons:
        if len(ring) < 6 or len(ring) % 2 != 0:
            raise SchemaError(f"polygon ring needs >= 3 (x, y) pairs, got {len(ring)} values")
        xs = np.asarray(ring[0::2], dtype=np.float64)
        ys = np.asarray(ring[1::2], dtype=np.float64)
        x2 = np.roll(xs, -1)
        y2 = np.roll(ys, -1)
        for ex1, ey1, ex2, ey2 in zip(xs, ys, x2, y2):
            if ey1 == ey2:
                continue
            ylo, yhi = (ey1, ey2) if ey1 < ey2 else (ey2, ey1)
            r0 = max(0, int(np.ceil(ylo - 0.5)))
            r1 = min(h - 1, int(np.floor(yhi - 0.5 - 1e-12)))
            if r1 < r0:
                continue
            rows = np.arange(r0, r1 + 1)
            yc = rows + 0.5
            x_int = ex1 + (yc - ey1) * (ex2 - ex1) / (ey2 - ey1)
            # pixel centers strictly left of the crossing see the edge on
            # their rightward ray
            k = np.clip(np.ceil(x_int - 0.5).astype(np.int64), 0, w)
            np.add.at(flips, (rows, 0), 1)
            np.subtract.at(flips, (rows, k), 1)
    inside = np.cumsum(flips[:, :w], axis=1) % 2
    return inside.astype(np.uint8)


@dataclass(frozen=True)
class EvalRecord:
    """One benchmark example: image reference, expression, ground truth."""

    image_id: str
    image_path: str
    expression: str
    gt_mask: RleMask
    object_class: str | None = None

    def __post_init__(self):
        if not self.expression or not self.expression.strip():
            raise SchemaError("record expression must be non-empty", key="expression")


def _require(obj: dict, key: str, path: str, context: str):
    if key not in obj:
        raise SchemaError(f"missing key in {context}", path=path, key=key)
    return obj[key]


def _parse_gt(gt: dict, path: str, context: str) -> RleMask:
    size = _require(gt, "size", path, context)
    if not (isinstance(size, (list, tuple)) and len(size) == 2):
        raise SchemaError(f"{context} size must be [H, W]", path=path, key="size")
    if "counts" in gt:
        try:
            return RleMask(size=(size[0], size[1]), counts=tuple(gt["counts"]))
        except MalformedRle as e:
            raise MalformedRle(f"{context}: {e}") from e
    if "polygons" in gt:
        bits = polygons_to_mask(gt["polygons"], (size[0], size[1]))
        return rle_encode(MaskProposal(bits=bits, source=GROUND_TRUTH))
    raise SchemaError(f"{context} needs 'counts' or 'polygons'", path=path, key="counts")


def load_proposals(path: str) -> dict[str, ProposalSet]:
    """Load a proposals file into ordered, index-stable proposal sets.

    Images listed with zero proposals get no entry; downstream selection
    on such images raises ``SelectionImpossible``.
    """
    doc = load_json(path)
    images = _require(doc, "images", path, "proposals document")
    if not isinstance(images, list):
        raise SchemaError("'images' must be a list", path=path, key="images")
    out: dict[str, ProposalSet] = {}
    for i, entry in enumerate(images):
        ctx = f"images[{i}]"
        image_id = str(_require(entry, "id", path, ctx))
        height = int(_require(entry, "height", path, ctx))
        width = int(_require(entry, "width", path, ctx))
        raw_props = _require(entry, "proposals", path, ctx)
        masks = []
        for j, rp in enumerate(raw_props):
            pctx = f"{ctx}.proposals[{j}]"
            size = _require(rp, "size", path, pctx)
            counts = _require(rp, "counts", path, pctx)
            if tuple(size) != (height, width):
                raise ShapeMismatch(
                    f"{pctx}: size {size} != image dims [{height}, {width}] [{path}]"
                )
            try:
                rle = RleMask(size=(size[0], size[1]), counts=tuple(counts))
            except MalformedRle as e:
                raise MalformedRle(f"{pctx}: {e} [{path}]") from e
            masks.append(rle_decode(rle, source="proposal"))
        if masks:
            out[image_id] = ProposalSet(proposals=tuple(masks), image_id=image_id)
    return out


def save_proposals(sets: dict[str, ProposalSet], path: str) -> None:
    images = []
    for image_id, pset in sets.items():
        h, w = pset.shape
        images.append(
            {
                "id": image_id,
                "height": h,
                "width": w,
                "proposals": [rle_encode(p).to_json() for p in pset],
            }
        )
    dump_json_atomic({"images": images}, path)


def load_records(path: str) -> list[EvalRecord]:
    """Load benchmark records; polygon ground truths are rasterized here."""
    doc = load_json(path)
    rows = _require(doc, "records", path, "records document")
    if not isinstance(rows, list):
        raise SchemaError("'records' must be a list", path=path, key="records")
    records = []
    for i, row in enumerate(rows):
        ctx = f"records[{i}]"
        gt = _parse_gt(_require(row, "gt", path, ctx), path, f"{ctx}.gt")
        records.append(
            EvalRecord(
                image_id=str(_require(row, "image_id", path, ctx)),
                image_path=str(_require(row, "image_path", path, ctx)),
                expression=str(_require(row, "expression", path, ctx)),
                gt_mask=gt,
                object_class=row.get("class"),
            )
        )
    return records


def save_records(records: list[EvalRecord], path: str) -> None:
    rows = [
        {
            "image_id": r.image_id,
            "image_path": r.image_path,
            "expression": r.expression,
            "gt": r.gt_mask.to_json(),
            "class": r.object_class,
        }
        for r in records
    ]
    dump_json_atomic({"records": rows}, path)


def load_json(path: str) -> dict:
    if not os.path.exists(path):
        raise SchemaError("file not found", path=path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}", path=path) from e
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object", path=path)
    return doc


def dump_json_atomic(doc: dict, path: str) -> None:
    """Write JSON atomically (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
