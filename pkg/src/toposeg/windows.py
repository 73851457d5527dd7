"""Shifted window partitioning of 2D/3D feature maps into token sets.

Maps are (B, C, *extents).  Partitioning cyclically rolls the map when
shifted, zero-pads each axis up to a multiple of the window size, and emits
one token set per window with the window axis folded into the batch.  The
reverse operation is an exact inverse (crop padding, undo the roll).
"""

import math
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F

from .errors import InvalidArgument

Tensor = torch.Tensor


@dataclass
class WindowLayout:
    """Geometry of one (possibly shifted) window partition."""

    spatial_rank: int
    window_size: int
    shifted: bool
    shift: Tuple[int, ...]
    orig_extents: Tuple[int, ...]
    padded_extents: Tuple[int, ...]
    grid: Tuple[int, ...]  # windows per axis
    num_windows: int
    tokens_per_window: int
    valid_mask: Tensor  # (num_windows, tokens_per_window) bool

    @property
    def num_padded_tokens(self) -> int:
        return self.num_windows * self.tokens_per_window - int(self.valid_mask.sum())


def _layout(extents: Tuple[int, ...], m: int, shifted: bool, device) -> WindowLayout:
    rank = len(extents)
    grid = tuple(math.ceil(e / m) for e in extents)
    padded = tuple(g * m for g in grid)
    shift = tuple(math.ceil(m / 2) if shifted else 0 for _ in extents)
    mask = torch.zeros(padded, dtype=torch.bool, device=device)
    mask[tuple(slice(0, e) for e in extents)] = True
    mask = _fold_windows(mask.reshape((1, 1) + padded).float(), m, grid).squeeze(-1) > 0.5
    return WindowLayout(
        spatial_rank=rank,
        window_size=m,
        shifted=shifted,
        shift=shift,
        orig_extents=extents,
        padded_extents=padded,
        grid=grid,
        num_windows=int(torch.tensor(grid).prod()),
        tokens_per_window=m ** rank,
        valid_mask=mask.reshape(-1, m ** rank),
    )


def _fold_windows(x: Tensor, m: int, grid: Tuple[int, ...]) -> Tensor:
    """(B, C, *padded) -> (B * num_windows, tokens_per_window, C)."""
    b, c = x.shape[:2]
    if len(grid) == 2:
        gh, gw = grid
        x = x.reshape(b, c, gh, m, gw, m)
        x = x.permute(0, 2, 4, 3, 5, 1)
        return x.reshape(b * gh * gw, m * m, c)
    gd, gh, gw = grid
    x = x.reshape(b, c, gd, m, gh, m, gw, m)
    x = x.permute(0, 2, 4, 6, 3, 5, 7, 1)
    return x.reshape(b * gd * gh * gw, m * m * m, c)


def _unfold_windows(tokens: Tensor, m: int, grid: Tuple[int, ...], batch: int) -> Tensor:
    """Inverse of _fold_windows; returns (B, C, *padded)."""
    c = tokens.shape[-1]
    if len(grid) == 2:
        gh, gw = grid
        x = tokens.reshape(batch, gh, gw, m, m, c)
        x = x.permute(0, 5, 1, 3, 2, 4)
        return x.reshape(batch, c, gh * m, gw * m)
    gd, gh, gw = grid
    x = tokens.reshape(batch, gd, gh, gw, m, m, m, c)
    x = x.permute(0, 7, 1, 4, 2, 5, 3, 6)
    return x.reshape(batch, c, gd * m, gh * m, gw * m)


def window_partition(fmap: Tensor, window_size: int, shifted: bool) -> Tuple[Tensor, WindowLayout]:
    """Split a feature map into per-window token sets.

    Returns (tokens, layout) with tokens of shape
    (batch * num_windows, window_size**rank, channels).  Padded positions are
    flagged invalid in ``layout.valid_mask``.
    """
    if fmap.dim() not in (4, 5):
        raise InvalidArgument(f"expected a (B, C, ...) map of rank 2 or 3, got {tuple(fmap.shape)}")
    if window_size < 1:
        raise InvalidArgument(f"window_size must be positive, got {window_size}")
    extents = tuple(fmap.shape[2:])
    layout = _layout(extents, window_size, shifted, fmap.device)
    x = fmap
    if shifted:
        dims = tuple(range(2, 2 + layout.spatial_rank))
        x = torch.roll(x, shifts=tuple(-s for s in layout.shift), dims=dims)
    pad = []
    for orig, padded in zip(reversed(extents), reversed(layout.padded_extents)):
        pad.extend([0, padded - orig])
    x = F.pad(x, pad)
    tokens = _fold_windows(x, window_size, layout.grid)
    return tokens, layout


def window_reverse(tokens: Tensor, layout: WindowLayout, shifted: bool = None) -> Tensor:
    """Reassemble windows into a feature map; exact inverse of partition."""
    if shifted is None:
        shifted = layout.shifted
    if tokens.dim() != 3 or tokens.shape[1] != layout.tokens_per_window:
        raise InvalidArgument(
            f"token shape {tuple(tokens.shape)} inconsistent with layout "
            f"(tokens_per_window={layout.tokens_per_window})"
        )
    if tokens.shape[0] % layout.num_windows != 0:
        raise InvalidArgument(
            f"window batch {tokens.shape[0]} not a multiple of num_windows={layout.num_windows}"
        )
    batch = tokens.shape[0] // layout.num_windows
    x = _unfold_windows(tokens, layout.window_size, layout.grid, batch)
    x = x[(slice(None), slice(None)) + tuple(slice(0, e) for e in layout.orig_extents)]
    if shifted:
        dims = tuple(range(2, 2 + layout.spatial_rank))
        x = torch.roll(x, shifts=layout.shift, dims=dims)
    return x
