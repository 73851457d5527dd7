"""Central finite-difference checks of analytic gradients.

Every registered component is rebuilt in double precision with a fixed
seed, reduced to a scalar through a frozen random projection, and compared
element-by-element against central differences.  The reported error is

    max|analytic - numeric| / max(max|analytic|, max|numeric|, tiny)

Inputs are drawn to stay away from max ties and argmax flips, which are the
only non-smooth points of these components.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import torch

from .blocks import FFN, PooledGrapher, TopoStagePair, WindowGrapher
from .classtree import balanced_tree
from .errors import InvalidArgument
from .graphs import MaxRelativeGraphConv, knn_graph
from .losses import LossConfig, one_hot, total_loss
from .pooling import max_pool_with_indices

Tensor = torch.Tensor


@dataclass
class GradCheckResult:
    component: str
    max_rel_err: float
    tolerance: float
    num_entries: int
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.component}: max relative error {self.max_rel_err:.3e} "
                f"(tolerance {self.tolerance:.0e}, {self.num_entries} entries)")


def central_differences(fn: Callable[[], float], leaves: List[Tensor],
                        eps: float = 1e-6) -> List[torch.Tensor]:
    grads = []
    with torch.no_grad():
        for leaf in leaves:
            grad = torch.zeros_like(leaf)
            flat = leaf.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                step = eps * max(1.0, abs(orig))
                flat[i] = orig + step
                f_plus = fn()
                flat[i] = orig - step
                f_minus = fn()
                flat[i] = orig
                gflat[i] = (f_plus - f_minus) / (2.0 * step)
            grads.append(grad)
    return grads


def compare_gradients(scalar_fn: Callable[[], Tensor], leaves: List[Tensor],
                      eps: float = 1e-6) -> Tuple[float, int]:
    """Max normalized deviation between autograd and finite differences."""
    for leaf in leaves:
        leaf.requires_grad_(True)
        if leaf.grad is not None:
            leaf.grad = None
    out = scalar_fn()
    out.backward()
    analytic = [leaf.grad.detach().clone() for leaf in leaves]
    for leaf in leaves:
        leaf.requires_grad_(False)
    numeric = central_differences(lambda: float(scalar_fn()), leaves, eps)
    max_dev = 0.0
    scale = 1e-12
    for a, n in zip(analytic, numeric):
        max_dev = max(max_dev, float((a - n).abs().max()))
        scale = max(scale, float(a.abs().max()), float(n.abs().max()))
    entries = sum(leaf.numel() for leaf in leaves)
    return max_dev / scale, entries


def _projection(shape, gen) -> Tensor:
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _module_case(module: torch.nn.Module, x: Tensor, gen) -> Tuple[Callable, List[Tensor]]:
    module.double()
    proj = _projection(tuple(module(x.clone()).shape), gen)

    def scalar():
        return (module(x) * proj).sum()

    leaves = [x] + [p for p in module.parameters()]
    return scalar, leaves


def _build_ffn(gen):
    module = FFN(6, rank=2, expansion=2, norm_kind="batch")
    x = torch.randn(2, 6, 4, 4, generator=gen, dtype=torch.float64)
    return _module_case(module, x, gen)


def _build_max_relative_conv(gen):
    x = torch.randn(1, 10, 6, generator=gen, dtype=torch.float64)
    conv = MaxRelativeGraphConv(6, 6, num_heads=2).double()
    edges = knn_graph(x.detach(), 3).edge_index  # fixed graph for the check
    proj = _projection((1, 10, 6), gen)

    def scalar():
        return (conv(x, edges) * proj).sum()

    return scalar, [x] + list(conv.parameters())


def _build_max_pool(gen):
    x = torch.randn(1, 2, 6, 6, generator=gen, dtype=torch.float64)
    proj = _projection((1, 2, 3, 3), gen)

    def scalar():
        pooled, _ = max_pool_with_indices(x)
        return (pooled * proj).sum()

    return scalar, [x]


def _build_pooled_grapher(gen):
    module = PooledGrapher(6, k=2, num_heads=2, do_pool=True)
    x = torch.randn(1, 6, 4, 4, generator=gen, dtype=torch.float64)
    return _module_case(module, x, gen)


def _build_window_grapher(gen):
    module = WindowGrapher(6, k=3, num_heads=2, window_size=3, shifted=True)
    x = torch.randn(1, 6, 6, 6, generator=gen, dtype=torch.float64)
    return _module_case(module, x, gen)


def _build_stage_pair(gen):
    module = TopoStagePair(8, k=3, num_heads=2, window_size=4, rank=3, do_pool=True,
                           ffn_expansion=2)
    x = torch.randn(1, 8, 4, 4, 4, generator=gen, dtype=torch.float64)
    return _module_case(module, x, gen)


def _build_total_loss(gen):
    c = 3
    logits = torch.randn(1, c, 6, 6, generator=gen, dtype=torch.float64)
    # keep a clear argmax margin so the critical map is locally constant
    top = logits.argmax(dim=1, keepdim=True)
    logits = logits.scatter_add(1, top, torch.full_like(top, 0.5, dtype=logits.dtype))
    labels = torch.randint(0, c, (1, 6, 6), generator=gen)
    g = one_hot(labels, c, dtype=torch.float64)
    tree = balanced_tree(c)
    cfg = LossConfig(lambda_dice=1.0, lambda_bti=1e-2)

    def scalar():
        f = torch.softmax(logits, dim=1)
        loss, _ = total_loss(f, g, tree, cfg)
        return loss

    return scalar, [logits]


REGISTRY: Dict[str, Tuple[Callable, float]] = {
    "ffn": (_build_ffn, 1e-6),
    "max_relative_conv": (_build_max_relative_conv, 1e-6),
    "max_pool": (_build_max_pool, 1e-6),
    "pooled_grapher": (_build_pooled_grapher, 1e-4),
    "window_grapher": (_build_window_grapher, 1e-4),
    "stage_pair": (_build_stage_pair, 1e-4),
    "total_loss": (_build_total_loss, 1e-4),
}


def check_component(name: str, tolerance: float = None, seed: int = 0) -> GradCheckResult:
    if name not in REGISTRY:
        raise InvalidArgument(
            f"unknown component {name!r}; registered: {', '.join(sorted(REGISTRY))}"
        )
    builder, default_tol = REGISTRY[name]
    tol = tolerance if tolerance is not None else default_tol
    gen = torch.Generator().manual_seed(seed)
    scalar_fn, leaves = builder(gen)
    err, entries = compare_gradients(scalar_fn, leaves)
    return GradCheckResult(component=name, max_rel_err=err, tolerance=tol,
                           num_entries=entries, passed=err < tol)
