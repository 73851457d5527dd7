"""Topological-interaction critical pixel maps.

A pixel is critical when two classes that must not touch meet inside a
3**rank neighborhood.  The all-pairs variant checks every unordered class
pair; the binary-tree variant checks one (left set, right set) division per
internal tree node and reaches the same map with far fewer mask dilations:
c*(c-1) versus 2*(c-1) for c classes.

Every dilation is one max-filter convolution and is counted in an explicit
budget so the complexity claims are testable.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from .classtree import ClassTree
from .errors import ConfigurationError, InvalidArgument

Tensor = torch.Tensor


@dataclass
class ConvBudget:
    """Counts mask-dilation convolutions spent building a critical map."""

    count: int = 0
    events: List[str] = field(default_factory=list)

    def add(self, n: int, label: str = "") -> None:
        self.count += n
        if label:
            self.events.append(label)


def dilate_mask(mask: Tensor, budget: Optional[ConvBudget] = None) -> Tensor:
    """One all-ones 3**rank dilation of a binary (B, *extents) mask."""
    rank = mask.dim() - 1
    if rank not in (2, 3):
        raise InvalidArgument(f"expected (B, *extents) with rank 2 or 3, got {tuple(mask.shape)}")
    x = mask.unsqueeze(1).float()
    if rank == 2:
        out = F.max_pool2d(x, kernel_size=3, stride=1, padding=1)
    else:
        out = F.max_pool3d(x, kernel_size=3, stride=1, padding=1)
    if budget is not None:
        budget.add(1)
    return out.squeeze(1)


def pairwise_critical(mask_a: Tensor, mask_b: Tensor,
                      budget: Optional[ConvBudget] = None,
                      check: bool = True) -> Tensor:
    """Critical pixels where two disjoint binary masks touch.

    Dilates each mask once; a pixel of one mask inside the other's dilation
    is critical.  Returns the union mask.  ``check=False`` skips the input
    validation for masks that partition space by construction.
    """
    if mask_a.shape != mask_b.shape:
        raise InvalidArgument(
            f"mask shapes differ: {tuple(mask_a.shape)} vs {tuple(mask_b.shape)}"
        )
    if check:
        for name, m in (("mask_a", mask_a), ("mask_b", mask_b)):
            vals = torch.unique(m)
            if not bool(((vals == 0) | (vals == 1)).all()):
                raise InvalidArgument(f"{name} is not binary")
        if bool((mask_a * mask_b).any()):
            raise InvalidArgument("masks overlap; class masks must partition space")
    dil_a = dilate_mask(mask_a, budget)
    dil_b = dilate_mask(mask_b, budget)
    crit = (dil_a * mask_b) + (dil_b * mask_a)
    return (crit > 0).float()


def class_masks(labels: Tensor, num_classes: int) -> Tensor:
    """(B, *extents) integer labels -> (B, c, *extents) binary masks."""
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidArgument(
            f"labels outside [0, {num_classes}): "
            f"range {int(labels.min())}..{int(labels.max())}"
        )
    return F.one_hot(labels.long(), num_classes).movedim(-1, 1).float()


def merged_mask(masks: Tensor, classes: Sequence[int]) -> Tensor:
    return masks[:, list(classes)].sum(dim=1)


def all_pairs_critical_map(pred_labels: Tensor, num_classes: int,
                           budget: Optional[ConvBudget] = None,
                           pairs: Optional[Sequence[Tuple[int, int]]] = None) -> Tensor:
    """Union of pairwise critical maps over all unordered class pairs.

    Costs c*(c-1) dilations for c classes since each pair dilates both of
    its masks.
    """
    masks = class_masks(pred_labels, num_classes)
    if pairs is None:
        pairs = list(combinations(range(num_classes), 2))
    crit = torch.zeros_like(masks[:, 0])
    for a, b in pairs:
        crit = torch.maximum(crit,
                             pairwise_critical(masks[:, a], masks[:, b], budget,
                                               check=False))
    return crit


def tree_critical_map(pred_labels: Tensor, tree: ClassTree,
                      budget: Optional[ConvBudget] = None) -> Tensor:
    """Union of division-level critical maps over the class tree.

    Each division merges its side class sets into two binary masks and runs
    the pairwise check once: 2*(c-1) dilations in total (minus skipped
    divisions).
    """
    masks = class_masks(pred_labels, tree.num_classes)
    crit = torch.zeros_like(masks[:, 0])
    for div in tree.active_divisions():
        left = merged_mask(masks, div.left)
        if div.kind == "exclusion":
            right = merged_mask(masks, div.right)
        elif div.kind == "containment":
            # The left set must stay inside the node's merged set: check it
            # against everything outside left + right.
            right = 1.0 - merged_mask(masks, div.classes)
        else:
            raise ConfigurationError(f"unknown division kind {div.kind!r}")
        crit = torch.maximum(crit, pairwise_critical(left, right, budget, check=False))
    return crit
