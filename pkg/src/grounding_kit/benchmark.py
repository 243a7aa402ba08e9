"""Benchmark runner and ablation sweeps.

A run is driven by a flat key-value config: where the records, proposals,
parse trees, and adapter config live, plus the fusion weights, masking
depth, and an optional baseline to score with instead of the main
pipeline. Each example yields one report row; the summary is recomputed
purely from the rows, so rows carry the raw intersection and union pixel
counts alongside the IoU.

Per-example failures (no proposals for an image, all proposals empty)
are reported and skipped: they contribute zero intersection and the full
ground-truth area to oIoU, are excluded from mIoU, and are counted in
the summary.

Reports are deterministic for a fixed config: examples aggregate in
record order whatever the worker count, and execution-only knobs
(workers, cache location, output paths) are not embedded.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image as PILImage

from .baselines import BaselineKind, baseline_scores
from .core import Expression, FusionWeights, Image, ProposalSet, ScoredMask
from .encoders import (
    TextEncoder,
    VisualEncoder,
    build_encoders,
    load_encoder_config,
    validate_encoder_config,
)
from .errors import GroundingError, SchemaError
from .maskio import dump_json_atomic, load_proposals, load_records, rle_decode
from .metrics import best_proposal_iou, build_class_inventory, intersection_union, predicted_class
from .scoring import score_proposals, scored_from_values, select_mask
from .text import ParseTree, global_local_text_feature, load_parses
from .visual import FeatureCache, MaskingConfig

_CONFIG_DEFAULTS = {
    "alpha": 0.95,
    "beta": 0.5,
    "mask_layers": 3,
    "baseline": "none",
    "upper_bound": True,
    "mask_class": True,
    "workers": 1,
}

def resolve_config(config: dict) -> dict:
    """Merge defaults and validate the semantic knobs of a run config."""
    cfg = dict(_CONFIG_DEFAULTS)
    cfg.update(config)
    for key in ("records", "proposals"):
        if key not in cfg:
            raise SchemaError(f"benchmark config needs '{key}'", key=key)
    if "encoder" not in cfg and "encoder_config" not in cfg:
        raise SchemaError(
            "benchmark config needs 'encoder' (path) or 'encoder_config' (inline)",
            key="encoder",
        )
    if cfg["baseline"] != "none":
        BaselineKind.parse(str(cfg["baseline"]))  # validates
    FusionWeights(alpha=float(cfg["alpha"]), beta=float(cfg["beta"]))
    return cfg


def _resolved_encoder_config(cfg: dict) -> dict:
    if "encoder_config" in cfg and cfg["encoder_config"] is not None:
        enc = validate_encoder_config(dict(cfg["encoder_config"]))
    else:
        enc = load_encoder_config(str(cfg["encoder"]))
    if "seed" in cfg and cfg["seed"] is not None:
        enc["seed"] = int(cfg["seed"])
    return enc


def load_image(path: str) -> Image:
    try:
        with PILImage.open(path) as pil:
            pixels = np.asarray(pil.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise SchemaError("image file not found", path=path) from None
    return Image(pixels=pixels, id=os.path.basename(path))


def _resolve_path(base: str, path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base, path))


def score_example(
    vh: VisualEncoder,
    th: TextEncoder,
    img: Image,
    props: ProposalSet,
    expression: str,
    tree: ParseTree | None,
    weights: FusionWeights,
    cfg: MaskingConfig,
    baseline: BaselineKind | None,
    cache: FeatureCache,
) -> list[ScoredMask]:
    """Per-proposal scores for one example, via the main pipeline or a
    baseline sharing the same fused textual feature."""
    T = Expression(text=expression)
    if baseline is None:
        return score_proposals(vh, th, img, props, T, tree, weights, cfg, cache)
    t = global_local_text_feature(th, T, tree, weights.beta)
    return scored_from_values(baseline_scores(baseline, vh, img, t, props, cache))


def run_benchmark(config: dict) -> dict:
    """Execute a full benchmark run and return the report document."""
    cfg = resolve_config(config)
    enc_cfg = _resolved_encoder_config(cfg)
    vh, th = build_encoders(enc_cfg)

    records_path = str(cfg["records"])
    records = load_records(records_path)
    proposals = load_proposals(str(cfg["proposals"]))
    parses = load_parses(str(cfg["parses"])) if cfg.get("parses") else {}
    image_base = os.path.dirname(os.path.abspath(records_path))

    weights = FusionWeights(alpha=float(cfg["alpha"]), beta=float(cfg["beta"]))
    masking = MaskingConfig(mask_layers=int(cfg["mask_layers"]))
    baseline = None if cfg["baseline"] == "none" else BaselineKind.parse(str(cfg["baseline"]))
    cache = FeatureCache(cfg.get("cache_dir"))
    compute_ub = bool(cfg["upper_bound"])
    inventory = build_class_inventory(records) if cfg["mask_class"] else {}

    predictions: list = [None] * len(records)

    def run_one(index: int) -> dict:
        r = records[index]
        row_id = f"{r.image_id}:{index}"
        gt = rle_decode(r.gt_mask)
        row: dict = {"id": row_id}
        try:
            pset = proposals.get(r.image_id)
            if pset is None or len(pset) == 0:
                raise GroundingError(f"no proposals for image {r.image_id!r}")
            img = load_image(_resolve_path(image_base, r.image_path))
            if gt.shape != img.shape:
                raise GroundingError(
                    f"gt size {gt.shape} != image size {img.shape}"
                )
            scored = score_example(
                vh, th, img, pset, r.expression, parses.get(r.expression),
                weights, masking, baseline, cache,
            )
            chosen = select_mask(scored)
            pred = pset[chosen.proposal_index]
            inter, union = intersection_union(pred, gt)
            predictions[index] = pred
            row.update(
                chosen=chosen.proposal_index,
                score=chosen.score,
                iou=(inter / union if union else 1.0),
                inter=inter,
                union=union,
            )
            if compute_ub:
                best_idx, _ = best_proposal_iou(gt, pset)
                ub_i, ub_u = intersection_union(pset[best_idx], gt)
                row.update(ub_inter=ub_i, ub_union=ub_u)
            if inventory and r.object_class is not None:
                cls = predicted_class(pred, inventory.get(r.image_id, []))
                row["class_match"] = bool(cls == r.object_class)
            else:
                row["class_match"] = None
        except GroundingError as e:
            gt_area = int(gt.bits.sum())
            row.update(
                chosen=-1, score=None, iou=0.0, inter=0, union=gt_area,
                error=str(e), class_match=None,
            )
            if compute_ub:
                row.update(ub_inter=0, ub_union=gt_area)
        return row

    workers = int(cfg.get("workers", 1))
    indices = range(len(records))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, indices))
    else:
        rows = [run_one(i) for i in indices]

    report = {
        "config": {
            "records": str(cfg["records"]),
            "proposals": str(cfg["proposals"]),
            "parses": cfg.get("parses"),
            "encoder": enc_cfg,
            "alpha": float(cfg["alpha"]),
            "beta": float(cfg["beta"]),
            "mask_layers": int(cfg["mask_layers"]),
            "baseline": str(cfg["baseline"]),
            "upper_bound": compute_ub,
            "mask_class": bool(cfg["mask_class"]),
        },
        "examples": rows,
        "summary": summarize_rows(rows),
    }
    return report


def summarize_rows(rows: list[dict]) -> dict:
    """Aggregate metrics purely from per-example rows."""
    total_i = sum(r["inter"] for r in rows)
    total_u = sum(r["union"] for r in rows)
    ok_rows = [r for r in rows if "error" not in r]
    failures = len(rows) - len(ok_rows)
    oiou = (total_i / total_u) if total_u else 1.0
    miou = (sum(r["iou"] for r in ok_rows) / len(ok_rows)) if ok_rows else 0.0

    mc_acc = None
    cc_oiou = None
    classed = [r for r in ok_rows if r.get("class_match") is not None]
    if classed:
        matches = [r for r in classed if r["class_match"]]
        mc_acc = len(matches) / len(classed)
        cc_u = sum(r["union"] for r in matches)
        cc_oiou = (sum(r["inter"] for r in matches) / cc_u) if cc_u else 0.0

    ub_oiou = None
    if rows and all("ub_inter" in r for r in rows):
        ub_u = sum(r["ub_union"] for r in rows)
        ub_oiou = (sum(r["ub_inter"] for r in rows) / ub_u) if ub_u else 1.0

    return {
        "oiou": oiou,
        "miou": miou,
        "mc_acc": mc_acc,
        "cc_oiou": cc_oiou,
        "upper_bound_oiou": ub_oiou,
        "examples": len(rows),
        "failures": failures,
    }


def write_report(report: dict, path: str) -> None:
    dump_json_atomic(report, path)


ABLATION_AXES = ("alpha", "beta", "mask_layers")


def ablation_values(axis: str, config: dict) -> list[float]:
    """Default sweep grid: 0, 0.05, ..., 1 for the fusion weights, or
    every masking depth 0..L for the layer count."""
    if axis in ("alpha", "beta"):
        return [round(0.05 * i, 2) for i in range(21)]
    if axis == "mask_layers":
        enc = _resolved_encoder_config(resolve_config(config))
        return list(range(int(enc["layer_count"]) + 1))
    raise SchemaError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def run_ablation(config: dict, axis: str, values: list[float] | None = None) -> list[dict]:
    """Sweep one axis, holding the other knobs at their config values.

    Returns one row per grid point: {axis, value, oiou, miou, failures}.
    """
    if axis not in ABLATION_AXES:
        raise SchemaError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    if values is None:
        values = ablation_values(axis, config)
    rows = []
    for v in values:
        point = dict(config)
        point[axis] = v
        report = run_benchmark(point)
        rows.append(
            {
                "axis": axis,
                "value": v,
                "oiou": report["summary"]["oiou"],
                "miou": report["summary"]["miou"],
                "failures": report["summary"]["failures"],
            }
        )
    return rows


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["axis", "value", "oiou", "miou", "failures"])
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_ablation_csv(rows: list[dict], path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(ablation_csv(rows))
    os.replace(tmp, path)
