"""Segmentation evaluation metrics.

oIoU accumulates intersection and union pixel counts across a dataset
before dividing; mIoU averages per-example IoUs. The proposal upper
bound substitutes, per example, the proposal with maximum IoU against
the ground truth. The class diagnostics label each predicted mask with
the class of the ground-truth mask it overlaps most, then measure how
often that label matches the target (MC-ACC) and the oIoU over the
class-correct subset (CC-oIoU).
"""

from __future__ import annotations

from .core import MaskProposal, ProposalSet
from .errors import SelectionImpossible, ShapeMismatch
from .maskio import EvalRecord, rle_decode


def intersection_union(a: MaskProposal, b: MaskProposal) -> tuple[int, int]:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int((a.bits & b.bits).sum())
    union = int((a.bits | b.bits).sum())
    return inter, union


def iou(a: MaskProposal, b: MaskProposal) -> float:
    """Intersection over union; 1.0 when both masks are empty, 0.0 when
    exactly one is (keeps upper-bound monotonicity)."""
    inter, union = intersection_union(a, b)
    if union == 0:
        return 1.0
    return inter / union


def overall_iou(pairs: list[tuple[MaskProposal, MaskProposal]]) -> float:
    """Total intersection over total union, accumulated across pairs."""
    total_i = 0
    total_u = 0
    for pred, gt in pairs:
        inter, union = intersection_union(pred, gt)
        total_i += inter
        total_u += union
    if total_u == 0:
        return 1.0
    return total_i / total_u


def mean_iou(pairs: list[tuple[MaskProposal, MaskProposal]]) -> float:
    """Average of per-pair IoUs."""
    if not pairs:
        raise ValueError("mean_iou of an empty pair list is undefined")
    return sum(iou(pred, gt) for pred, gt in pairs) / len(pairs)


def best_proposal_iou(gt: MaskProposal, props: ProposalSet) -> tuple[int, float]:
    """Index and IoU of the proposal overlapping the ground truth most;
    ties break toward the lowest index."""
    best_idx = -1
    best = -1.0
    for i, p in enumerate(props):
        v = iou(p, gt)
        if v > best:
            best = v
            best_idx = i
    if best_idx < 0:
        raise SelectionImpossible("proposal set is empty")
    return best_idx, best


def proposal_upper_bound(
    records: list[EvalRecord], proposals: dict[str, ProposalSet]
) -> tuple[float, float]:
    """(oIoU, mIoU) of an oracle that always picks the max-overlap
    proposal. Dominates every selection strategy on the same inputs."""
    pairs = []
    for r in records:
        pset = proposals.get(r.image_id)
        if pset is None or len(pset) == 0:
            raise SelectionImpossible(f"no proposals for image {r.image_id!r}")
        gt = rle_decode(r.gt_mask)
        idx, _ = best_proposal_iou(gt, pset)
        pairs.append((pset[idx], gt))
    return overall_iou(pairs), mean_iou(pairs)


ClassInventory = dict[str, list[tuple[str, MaskProposal]]]


def build_class_inventory(records: list[EvalRecord]) -> ClassInventory:
    """Per-image ground-truth mask inventory with classes, collected from
    the records themselves (duplicate masks deduplicated by their RLE)."""
    inventory: ClassInventory = {}
    seen: dict[str, set[tuple]] = {}
    for r in records:
        if r.object_class is None:
            continue
        key = (r.object_class, r.gt_mask.size, r.gt_mask.counts)
        if key in seen.setdefault(r.image_id, set()):
            continue
        seen[r.image_id].add(key)
        inventory.setdefault(r.image_id, []).append(
            (r.object_class, rle_decode(r.gt_mask))
        )
    return inventory


def predicted_class(
    prediction: MaskProposal, candidates: list[tuple[str, MaskProposal]]
) -> str | None:
    """Class of the ground-truth mask with the largest IoU against the
    prediction; ties break toward the earliest inventory entry."""
    best_class: str | None = None
    best = -1.0
    for cls, gt in candidates:
        v = iou(prediction, gt)
        if v > best:
            best = v
            best_class = cls
    return best_class


def mask_class_metrics(
    records: list[EvalRecord],
    predictions: list[MaskProposal],
    inventory: ClassInventory | None = None,
) -> tuple[float, float]:
    """(MC-ACC, CC-oIoU) over records that carry an object class.

    MC-ACC is the fraction of examples whose predicted-mask class equals
    the target class; CC-oIoU is the overall IoU restricted to those
    class-correct examples (0.0 when none are correct).
    """
    if len(records) != len(predictions):
        raise ValueError(
            f"{len(records)} records but {len(predictions)} predictions"
        )
    if inventory is None:
        inventory = build_class_inventory(records)
    total = 0
    correct_pairs = []
    for r, pred in zip(records, predictions):
        if r.object_class is None:
            continue
        total += 1
        cls = predicted_class(pred, inventory.get(r.image_id, []))
        if cls == r.object_class:
            correct_pairs.append((pred, rle_decode(r.gt_mask)))
    if total == 0:
        raise ValueError("no records carry an object class")
    mc_acc = len(correct_pairs) / total
    cc_oiou = overall_iou(correct_pairs) if correct_pairs else 0.0
    return mc_acc, cc_oiou
