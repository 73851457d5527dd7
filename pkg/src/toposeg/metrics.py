"""Evaluation metrics: hard Dice and (percentile) Hausdorff surface distance.

Distances are in voxel units.  Surfaces are mask voxels with a Moore
neighbor outside the mask; array borders count as outside.  Conventions for
degenerate cases: empty-vs-empty gives DSC 1 / HD 0, empty-vs-nonempty gives
DSC 0 and the array diagonal as an HD sentinel.
"""

import math
from typing import Dict, Iterable, List

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument


def _as_labels(arr) -> np.ndarray:
    a = np.asarray(arr)
    if hasattr(arr, "detach"):
        a = arr.detach().cpu().numpy()
    return a


def dsc(pred_labels, gt_labels, class_id: int) -> float:
    """Hard Dice for one class: 2|A∩B| / (|A|+|B|)."""
    pred = _as_labels(pred_labels)
    gt = _as_labels(gt_labels)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"label shapes differ: {pred.shape} vs {gt.shape}")
    a = pred == class_id
    b = gt == class_id
    sa, sb = int(a.sum()), int(b.sum())
    if sa == 0 and sb == 0:
        return 1.0
    inter = int((a & b).sum())
    return 2.0 * inter / (sa + sb)


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Boundary voxels of a binary mask (Moore connectivity, border counts)."""
    structure = np.ones((3,) * mask.ndim, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def _diagonal(shape) -> float:
    return math.sqrt(sum(float(s) ** 2 for s in shape))


def hausdorff(pred_labels, gt_labels, class_id: int, percentile: float = 100.0) -> float:
    """Symmetric surface distance at the given percentile (100 = max)."""
    pred = _as_labels(pred_labels)
    gt = _as_labels(gt_labels)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"label shapes differ: {pred.shape} vs {gt.shape}")
    a = pred == class_id
    b = gt == class_id
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return _diagonal(pred.shape)
    surf_a = surface_mask(a)
    surf_b = surface_mask(b)
    dist_to_b = ndimage.distance_transform_edt(~surf_b)
    dist_to_a = ndimage.distance_transform_edt(~surf_a)
    distances = np.concatenate([dist_to_b[surf_a], dist_to_a[surf_b]])
    return float(np.percentile(distances, percentile))


def metric_records(pred_labels, gt_labels, class_ids: Iterable[int], case: str = "case",
                   hd_percentile: float = 100.0) -> List[Dict]:
    """One record per class for the report writer."""
    records = []
    for cls in class_ids:
        records.append({
            "case": case,
            "class": int(cls),
            "dsc": dsc(pred_labels, gt_labels, cls),
            "hd": hausdorff(pred_labels, gt_labels, cls, hd_percentile),
        })
    return records
