"""Pixel losses, the gated interaction loss, and the total training loss.

The total loss is  ce + lambda_dice * dice + lambda_bti * bti  where the
interaction term evaluates the pixel loss on likelihood and ground-truth
maps gated by the critical pixel map V derived from the prediction's argmax
labels.  Gated reductions normalize over the gated voxel count so that an
all-ones gate reproduces the ungated loss exactly and an empty gate yields
exactly zero.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from .classtree import ClassTree
from .errors import InvalidArgument
from .interaction import ConvBudget, tree_critical_map

Tensor = torch.Tensor

DICE_EPS = 1e-5
LOG_FLOOR = 1e-12


@dataclass
class LossConfig:
    lambda_dice: float = 1.0
    lambda_bti: float = 1e-6

    def __post_init__(self):
        if not (self.lambda_dice >= 0 and self.lambda_bti >= 0):
            raise InvalidArgument("loss weights must be finite and non-negative")

    @classmethod
    def default_for_rank(cls, rank: int, lambda_dice: float = 1.0) -> "LossConfig":
        return cls(lambda_dice=lambda_dice, lambda_bti=1e-4 if rank == 2 else 1e-6)


def one_hot(labels: Tensor, num_classes: int, dtype=torch.float32) -> Tensor:
    return F.one_hot(labels.long(), num_classes).movedim(-1, 1).to(dtype)


def validate_prediction_pair(f: Tensor, g: Tensor) -> None:
    if f.shape != g.shape:
        raise InvalidArgument(f"likelihood shape {tuple(f.shape)} != ground truth {tuple(g.shape)}")
    if f.dim() < 3:
        raise InvalidArgument("expected (batch, classes, *extents) maps")
    sums = f.sum(dim=1)
    if not bool(((sums - 1.0).abs() < 1e-5).all()):
        raise InvalidArgument("likelihoods must sum to 1 over classes at every voxel")
    if not bool(((g == 0) | (g == 1)).all()) or not bool((g.sum(dim=1) == 1).all()):
        raise InvalidArgument("ground truth must be one-hot")


def _gate(f: Tensor, gate: Optional[Tensor]) -> Tensor:
    if gate is None:
        return f
    return f * gate.unsqueeze(1)


def _gated_voxels(shape, gate: Optional[Tensor], like: Tensor) -> Tensor:
    if gate is None:
        n = 1
        for s in (shape[0],) + tuple(shape[2:]):
            n *= s
        return torch.tensor(float(n), dtype=like.dtype, device=like.device)
    return gate.sum().clamp(min=1.0)


def ce_loss(f: Tensor, g: Tensor, gate: Optional[Tensor] = None) -> Tensor:
    """Cross entropy of likelihoods against one-hot targets, voxel averaged."""
    fm = _gate(f, gate)
    gm = _gate(g, gate)
    per_voxel = -(gm * torch.log(fm.clamp(min=LOG_FLOOR))).sum(dim=1)
    return per_voxel.sum() / _gated_voxels(f.shape, gate, f)


def dice_loss(f: Tensor, g: Tensor, gate: Optional[Tensor] = None) -> Tensor:
    """Soft Dice loss averaged over foreground classes."""
    if f.shape[1] < 2:
        raise InvalidArgument("dice loss needs at least two classes")
    fm = _gate(f, gate)
    gm = _gate(g, gate)
    dims = (0,) + tuple(range(2, f.dim()))
    num = 2.0 * (fm * gm).sum(dim=dims) + DICE_EPS
    den = fm.sum(dim=dims) + gm.sum(dim=dims) + DICE_EPS
    return 1.0 - (num / den)[1:].mean()


def pixel_loss(f: Tensor, g: Tensor, lambda_dice: float = 1.0,
               gate: Optional[Tensor] = None) -> Tensor:
    return ce_loss(f, g, gate) + lambda_dice * dice_loss(f, g, gate)


def bti_loss(f: Tensor, g: Tensor, critical: Tensor, lambda_dice: float = 1.0) -> Tensor:
    """Pixel loss on critically gated maps; zero when the gate is empty."""
    if critical.shape != (f.shape[0],) + tuple(f.shape[2:]):
        raise InvalidArgument(
            f"critical map shape {tuple(critical.shape)} does not broadcast over {tuple(f.shape)}"
        )
    return pixel_loss(f, g, lambda_dice, gate=critical)


def total_loss(f: Tensor, g: Tensor, tree: Optional[ClassTree], cfg: LossConfig,
               validate: bool = False) -> Tuple[Tensor, dict]:
    """Full training loss with per-component diagnostics.

    The critical map is built from argmax labels (ties to the lowest class)
    and held out of the gradient graph; it only gates the pixel loss.
    """
    if validate:
        validate_prediction_pair(f, g)
    ce = ce_loss(f, g)
    dice = dice_loss(f, g)
    diagnostics = {
        "ce": float(ce.detach()),
        "dice": float(dice.detach()),
        "bti": 0.0,
        "conv_count": 0,
        "lambda_dice": cfg.lambda_dice,
        "lambda_bti": cfg.lambda_bti,
        "critical_voxels": 0,
    }
    loss = ce + cfg.lambda_dice * dice
    if cfg.lambda_bti > 0:
        if tree is None:
            raise InvalidArgument("lambda_bti > 0 requires a class tree")
        budget = ConvBudget()
        with torch.no_grad():
            pred_labels = f.argmax(dim=1)
            critical = tree_critical_map(pred_labels, tree, budget).to(f.dtype)
        bti = bti_loss(f, g, critical, cfg.lambda_dice)
        loss = loss + cfg.lambda_bti * bti
        diagnostics["bti"] = float(bti.detach())
        diagnostics["conv_count"] = budget.count
        diagnostics["critical_voxels"] = int(critical.sum())
    diagnostics["total"] = float(loss.detach())
    return loss, diagnostics
