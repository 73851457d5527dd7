"""2x max pooling with recorded argmax positions, and the matching unpool.

Pooling uses kernel 2, stride 2 per axis with floor semantics: odd tails are
cropped, and the unpool restores the original extents with zeros outside the
recorded maxima.  Ties select the lowest flat index inside each window.
"""

from dataclasses import dataclass
from typing import Tuple

import torch

from .errors import CorruptedRecord, InvalidArgument

Tensor = torch.Tensor


@dataclass
class PoolRecord:
    """Where each pooled maximum came from (flat index into the input)."""

    indices: Tensor  # (B, C, num_pooled) long, flat into pre_pool_extents
    pre_pool_extents: Tuple[int, ...]
    pooled_extents: Tuple[int, ...]


def _window_view(x: Tensor, rank: int):
    """Reshape (B, C, *extents) to (B, C, *half, 2**rank) window-major."""
    b, c = x.shape[:2]
    ext = x.shape[2:]
    half = tuple(e // 2 for e in ext)
    crop = x[(slice(None), slice(None)) + tuple(slice(0, 2 * h) for h in half)]
    if rank == 2:
        hh, hw = half
        v = crop.reshape(b, c, hh, 2, hw, 2).permute(0, 1, 2, 4, 3, 5)
        return v.reshape(b, c, hh, hw, 4), half
    hd, hh, hw = half
    v = crop.reshape(b, c, hd, 2, hh, 2, hw, 2).permute(0, 1, 2, 4, 6, 3, 5, 7)
    return v.reshape(b, c, hd, hh, hw, 8), half


def _flat_index_map(half: Tuple[int, ...], extents: Tuple[int, ...], device) -> Tensor:
    """For every pooling window and local slot, the global flat input index."""
    rank = len(half)
    grids = torch.meshgrid(*[torch.arange(h, device=device) for h in half], indexing="ij")
    offsets = torch.meshgrid(*[torch.arange(2, device=device)] * rank, indexing="ij")
    offsets = torch.stack([o.reshape(-1) for o in offsets], dim=0)  # (rank, 2**rank)
    flat = torch.zeros(half + (2 ** rank,), dtype=torch.long, device=device)
    for axis in range(rank):
        coord = grids[axis].unsqueeze(-1) * 2 + offsets[axis]
        flat = flat * extents[axis] + coord
    return flat


def max_pool_with_indices(fmap: Tensor) -> Tuple[Tensor, PoolRecord]:
    """Kernel-2 stride-2 max pooling; records each maximum's source index."""
    if fmap.dim() not in (4, 5):
        raise InvalidArgument(f"expected a (B, C, ...) map of rank 2 or 3, got {tuple(fmap.shape)}")
    rank = fmap.dim() - 2
    extents = tuple(fmap.shape[2:])
    for axis, e in enumerate(extents):
        if e < 2:
            raise InvalidArgument(f"spatial extent {e} on axis {axis} is below the pooling kernel 2")
    windows, half = _window_view(fmap, rank)
    win = windows.shape[-1]
    maxv = windows.max(dim=-1, keepdim=True).values
    is_max = windows == maxv
    slots = torch.arange(win, device=fmap.device)
    first = torch.where(is_max, slots, torch.full_like(slots, win)).min(dim=-1, keepdim=True).values
    pooled = torch.gather(windows, -1, first).squeeze(-1)
    flat_map = _flat_index_map(half, extents, fmap.device)
    flat_map = flat_map.unsqueeze(0).unsqueeze(0).expand(fmap.shape[0], fmap.shape[1], *flat_map.shape)
    indices = torch.gather(flat_map, -1, first).squeeze(-1)
    record = PoolRecord(
        indices=indices.reshape(fmap.shape[0], fmap.shape[1], -1),
        pre_pool_extents=extents,
        pooled_extents=half,
    )
    return pooled, record


def max_unpool(pooled: Tensor, record: PoolRecord) -> Tensor:
    """Scatter pooled values back to their recorded positions, zeros elsewhere."""
    b, c = pooled.shape[:2]
    numel = 1
    for e in record.pre_pool_extents:
        numel *= e
    if record.indices.numel() and (record.indices.min() < 0 or record.indices.max() >= numel):
        raise CorruptedRecord("pool record holds indices outside the recorded extents")
    flat_src = pooled.reshape(b, c, -1)
    if flat_src.shape[-1] != record.indices.shape[-1]:
        raise CorruptedRecord(
            f"pooled size {flat_src.shape[-1]} does not match record ({record.indices.shape[-1]})"
        )
    out = torch.zeros(b, c, numel, dtype=pooled.dtype, device=pooled.device)
    out = out.scatter(2, record.indices, flat_src)
    return out.reshape(b, c, *record.pre_pool_extents)
