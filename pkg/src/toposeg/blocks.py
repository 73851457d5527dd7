"""Residual graph-convolution blocks over feature maps.

Two flavors share one Grapher core (projection -> k-NN graph convolution with
inner residual -> projection, every linear followed by normalization and a
GELU):

* ``PooledGrapher`` halves the token grid with recorded max pooling, runs the
  graph convolution on the coarse tokens and scatters the result back.
* ``WindowGrapher`` partitions the map into (optionally shifted) windows and
  runs an independent graph convolution inside each window.

``TopoStagePair`` composes them with feed-forward blocks, all residual.
"""

from typing import Optional

import torch
import torch.nn as nn

from .errors import InvalidArgument
from .graphs import MaxRelativeGraphConv, knn_edges_masked
from .pooling import max_pool_with_indices, max_unpool
from .windows import window_partition, window_reverse

Tensor = torch.Tensor

INIT_SCALE = 0.05


def _init_uniform(module: nn.Module, scale: float = INIT_SCALE) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.Conv3d, nn.ConvTranspose2d, nn.ConvTranspose3d)):
            nn.init.uniform_(m.weight, -scale, scale)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def _zero_module(module: nn.Module) -> None:
    for p in module.parameters():
        nn.init.zeros_(p)


class TokenNorm(nn.Module):
    """Channel normalization for (B, N, C) token sets."""

    def __init__(self, kind: str, channels: int):
        super().__init__()
        if kind == "batch":
            self.norm = nn.BatchNorm1d(channels)
        elif kind == "instance":
            self.norm = nn.InstanceNorm1d(channels, affine=True)
        else:
            raise InvalidArgument(f"unknown normalization kind {kind!r}")

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


def map_norm(kind: str, channels: int, rank: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels) if rank == 2 else nn.BatchNorm3d(channels)
    if kind == "instance":
        cls = nn.InstanceNorm2d if rank == 2 else nn.InstanceNorm3d
        return cls(channels, affine=True)
    raise InvalidArgument(f"unknown normalization kind {kind!r}")


class FFN(nn.Module):
    """Two pointwise convolutions with expansion; shape preserving."""

    def __init__(self, channels: int, rank: int, expansion: int = 4, norm_kind: str = "batch"):
        super().__init__()
        conv = nn.Conv2d if rank == 2 else nn.Conv3d
        hidden = expansion * channels
        self.fc1 = conv(channels, hidden, 1)
        self.norm1 = map_norm(norm_kind, hidden, rank)
        self.act = nn.GELU()
        self.fc2 = conv(hidden, channels, 1)
        self.norm2 = map_norm(norm_kind, channels, rank)
        _init_uniform(self)
        _zero_module(self.fc2)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm2(self.fc2(self.act(self.norm1(self.fc1(x)))))


class GrapherCore(nn.Module):
    """Projection, dynamic graph convolution with inner residual, projection.

    Operates on token sets (B, N, C); the pre-projection widens to
    ``hidden_ratio * C`` and the k-NN graph is rebuilt from the projected
    features on every call.  k is clamped per row when a window offers fewer
    than k candidates (counted in ``clamp_events``).
    """

    def __init__(self, channels: int, k: int, num_heads: int, norm_kind: str,
                 hidden_ratio: int = 2):
        super().__init__()
        self.k = k
        hidden = hidden_ratio * channels
        self.pre = nn.Linear(channels, hidden)
        self.norm_pre = TokenNorm(norm_kind, hidden)
        self.conv = MaxRelativeGraphConv(hidden, hidden, num_heads)
        self.norm_conv = TokenNorm(norm_kind, hidden)
        self.post = nn.Linear(hidden, channels)
        self.norm_post = TokenNorm(norm_kind, channels)
        self.act = nn.GELU()
        self.clamp_events = 0
        _init_uniform(self)
        _zero_module(self.post)

    def forward(self, tokens: Tensor, valid: Optional[Tensor] = None) -> Tensor:
        u = self.act(self.norm_pre(self.pre(tokens)))
        with torch.no_grad():  # neighbor selection is piecewise constant
            edge_index, edge_valid, clamped = knn_edges_masked(u.detach(), self.k, valid)
        self.clamp_events += clamped
        c = self.act(self.norm_conv(self.conv(u, edge_index, edge_valid)))
        return self.act(self.norm_post(self.post(u + c)))


def _flatten_map(fmap: Tensor) -> Tensor:
    return fmap.flatten(2).transpose(1, 2)


def _unflatten_map(tokens: Tensor, extents) -> Tensor:
    return tokens.transpose(1, 2).reshape(tokens.shape[0], tokens.shape[2], *extents)


class PooledGrapher(nn.Module):
    """Grapher over a max-pooled token grid (instance normalization).

    With ``do_pool`` off, the same pipeline runs on the full-resolution
    tokens, matching the plain Grapher.
    """

    def __init__(self, channels: int, k: int, num_heads: int, do_pool: bool = True,
                 norm_kind: str = "instance"):
        super().__init__()
        self.do_pool = do_pool
        self.core = GrapherCore(channels, k, num_heads, norm_kind)
        self.last_token_count = None

    def forward(self, fmap: Tensor) -> Tensor:
        if self.do_pool:
            pooled, record = max_pool_with_indices(fmap)
            tokens = _flatten_map(pooled)
            self.last_token_count = tokens.shape[1]
            out = self.core(tokens)
            return max_unpool(_unflatten_map(out, record.pooled_extents), record)
        tokens = _flatten_map(fmap)
        self.last_token_count = tokens.shape[1]
        out = self.core(tokens)
        return _unflatten_map(out, fmap.shape[2:])

    @property
    def clamp_events(self) -> int:
        return self.core.clamp_events


class WindowGrapher(nn.Module):
    """Grapher run independently inside shifted windows (batch normalization)."""

    def __init__(self, channels: int, k: int, num_heads: int, window_size: int,
                 shifted: bool = True, norm_kind: str = "batch"):
        super().__init__()
        self.window_size = window_size
        self.shifted = shifted
        self.core = GrapherCore(channels, k, num_heads, norm_kind)

    def forward(self, fmap: Tensor) -> Tensor:
        tokens, layout = window_partition(fmap, self.window_size, self.shifted)
        batch = fmap.shape[0]
        valid = layout.valid_mask.repeat(batch, 1)
        out = self.core(tokens, valid)
        return window_reverse(out, layout)

    @property
    def clamp_events(self) -> int:
        return self.core.clamp_events


class TopoStagePair(nn.Module):
    """Two residual blocks: pooled grapher + FFN, then window grapher + FFN."""

    def __init__(self, channels: int, k: int, num_heads: int, window_size: int,
                 rank: int, do_pool: bool = True, ffn_expansion: int = 4,
                 shifted: bool = True):
        super().__init__()
        self.pooled = PooledGrapher(channels, k, num_heads, do_pool=do_pool)
        self.ffn_pooled = FFN(channels, rank, ffn_expansion, norm_kind="instance")
        self.windowed = WindowGrapher(channels, k, num_heads, window_size, shifted=shifted)
        self.ffn_windowed = FFN(channels, rank, ffn_expansion, norm_kind="batch")

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.pooled(x)
        x = x + self.ffn_pooled(x)
        x = x + self.windowed(x)
        x = x + self.ffn_windowed(x)
        return x

    @property
    def clamp_events(self) -> int:
        return self.pooled.clamp_events + self.windowed.clamp_events
