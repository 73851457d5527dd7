"""Dynamic k-NN graphs over token sets and multi-head max-relative convolution.

Token sets are dense tensors of shape (batch, num_nodes, channels).  Graphs
are directed: each node receives edges from its k nearest neighbors in
feature space, recomputed from the current features on every call.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from .errors import InvalidArgument

Tensor = torch.Tensor


@dataclass
class PatchGraph:
    """Node features plus a directed k-NN edge set.

    ``edge_index[b, i, :]`` holds the k source nodes feeding center ``i``.
    """

    features: Tensor  # (B, N, C)
    edge_index: Tensor  # (B, N, K) long
    k: int


def pairwise_sq_distances(x: Tensor) -> Tensor:
    """Squared Euclidean distances, (B, N, N), via the inner-product expansion.

    Bitwise-identical features produce bitwise-identical distances, so the
    lowest-index tie rule of the stable sort downstream stays meaningful.
    """
    sq = (x * x).sum(dim=-1)
    gram = x @ x.transpose(1, 2)
    d = sq.unsqueeze(2) + sq.unsqueeze(1) - 2.0 * gram
    return d.clamp(min=0)


def knn_graph(features: Tensor, k: int) -> PatchGraph:
    """Build the directed k-NN graph over a token set.

    Self edges are excluded; ties are broken by lowest node index.
    """
    if features.dim() != 3:
        raise InvalidArgument(f"expected (batch, nodes, channels), got {tuple(features.shape)}")
    n = features.shape[1]
    if k < 1:
        raise InvalidArgument(f"k must be positive, got k={k}")
    if k >= n:
        raise InvalidArgument(f"k={k} must be smaller than the node count N={n}")
    if not torch.isfinite(features).all():
        raise InvalidArgument("node features must be finite")
    dist = pairwise_sq_distances(features)
    eye = torch.eye(n, dtype=torch.bool, device=features.device)
    dist = dist.masked_fill(eye, float("inf"))
    order = torch.argsort(dist, dim=-1, stable=True)
    return PatchGraph(features=features, edge_index=order[..., :k], k=k)


def knn_edges_masked(
    features: Tensor, k: int, valid: Optional[Tensor] = None
) -> Tuple[Tensor, Tensor, int]:
    """k-NN edges restricted to valid tokens, with per-row clamping.

    ``valid`` is a (B, N) bool mask; invalid tokens are excluded both as
    centers and as neighbor candidates.  Rows with fewer than k candidates
    are clamped to all available ones.  Returns (edge_index, edge_valid,
    clamp_events) where clamp_events counts rows whose k was reduced.
    """
    b, n, _ = features.shape
    if valid is None:
        valid = torch.ones(b, n, dtype=torch.bool, device=features.device)
    dist = pairwise_sq_distances(features)
    eye = torch.eye(n, dtype=torch.bool, device=features.device)
    dist = dist.masked_fill(eye, float("inf"))
    dist = dist.masked_fill(~valid.unsqueeze(1), float("inf"))
    k_cols = min(k, n - 1) if n > 1 else 0
    if k_cols == 0:
        edge_index = torch.zeros(b, n, 0, dtype=torch.long, device=features.device)
        edge_valid = torch.zeros(b, n, 0, dtype=torch.bool, device=features.device)
        return edge_index, edge_valid, int(valid.any(dim=1).sum()) if k > 0 else 0
    order = torch.argsort(dist, dim=-1, stable=True)
    edge_index = order[..., :k_cols]
    candidates = (valid.sum(dim=1, keepdim=True) - 1).clamp(min=0)  # per row
    k_eff = torch.minimum(candidates, torch.full_like(candidates, k))
    arange = torch.arange(k_cols, device=features.device).view(1, 1, k_cols)
    edge_valid = (arange < k_eff.unsqueeze(-1)) & valid.unsqueeze(-1)
    clamp_events = int((valid.any(dim=1) & (candidates.squeeze(1) < k)).sum())
    return edge_index, edge_valid, clamp_events


def gather_nodes(x: Tensor, index: Tensor) -> Tensor:
    """Gather neighbor features: x (B, N, C), index (B, N, K) -> (B, N, K, C)."""
    b, n, c = x.shape
    k = index.shape[-1]
    flat = index.reshape(b, n * k, 1).expand(-1, -1, c)
    return torch.gather(x, 1, flat).reshape(b, n, k, c)


class MaxRelativeGraphConv(nn.Module):
    """Multi-head max-relative graph convolution.

    Per center i the aggregate is the elementwise max over neighbors j of
    (x_j - x_i).  Each head owns a contiguous channel slice and applies its
    own linear update to concat(x_i, m_i) on that slice; head outputs are
    re-concatenated.
    """

    def __init__(self, in_dim: int, out_dim: int, num_heads: int = 1, bias: bool = True):
        super().__init__()
        if in_dim % num_heads != 0:
            raise InvalidArgument(f"in_dim={in_dim} not divisible by num_heads={num_heads}")
        if out_dim % num_heads != 0:
            raise InvalidArgument(f"out_dim={out_dim} not divisible by num_heads={num_heads}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.num_heads = num_heads
        self.weight = nn.Parameter(torch.empty(num_heads, 2 * in_dim // num_heads, out_dim // num_heads))
        self.bias = nn.Parameter(torch.zeros(num_heads, out_dim // num_heads)) if bias else None
        self.reset_parameters()

    def reset_parameters(self, scale: float = 0.05) -> None:
        nn.init.uniform_(self.weight, -scale, scale)
        if self.bias is not None:
            nn.init.zeros_(self.bias)

    def forward(self, x: Tensor, edge_index: Tensor, edge_valid: Optional[Tensor] = None) -> Tensor:
        b, n, c = x.shape
        if c != self.in_dim:
            raise InvalidArgument(f"feature dim {c} does not match in_dim {self.in_dim}")
        if edge_index.shape[:2] != (b, n):
            raise InvalidArgument("edge_index shape does not match the node set")
        k = edge_index.shape[-1]
        if k == 0:
            m = torch.zeros_like(x)
        else:
            diffs = gather_nodes(x, edge_index) - x.unsqueeze(2)
            if edge_valid is not None:
                neg = torch.finfo(x.dtype).min
                diffs = torch.where(edge_valid.unsqueeze(-1), diffs, torch.full_like(diffs, neg))
                m = diffs.max(dim=2).values
                has_edge = edge_valid.any(dim=-1, keepdim=True)
                m = torch.where(has_edge, m, torch.zeros_like(m))
            else:
                m = diffs.max(dim=2).values
        h = self.num_heads
        xh = x.reshape(b, n, h, c // h)
        mh = m.reshape(b, n, h, c // h)
        inp = torch.cat([xh, mh], dim=-1)
        out = torch.einsum("bnhi,hio->bnho", inp, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out.reshape(b, n, self.out_dim)


def max_relative_conv(graph: PatchGraph, conv: MaxRelativeGraphConv) -> Tensor:
    """Apply a max-relative convolution to an explicit PatchGraph."""
    return conv(graph.features, graph.edge_index)
