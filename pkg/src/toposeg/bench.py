"""Wall-time benchmark of all-pairs versus binary-tree critical maps."""

import statistics
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch

from .classtree import ClassTree, balanced_tree
from .errors import InvalidArgument
from .interaction import ConvBudget, all_pairs_critical_map, tree_critical_map


@dataclass
class BenchReport:
    num_classes: int
    extents: Tuple[int, ...]
    repeats: int
    ti_times: List[float] = field(default_factory=list)
    bti_times: List[float] = field(default_factory=list)
    ti_convs: int = 0
    bti_convs: int = 0
    maps_equal: bool = True
    skipped_divisions: int = 0

    @property
    def ti_median(self) -> float:
        return statistics.median(self.ti_times)

    @property
    def bti_median(self) -> float:
        return statistics.median(self.bti_times)

    @property
    def speedup(self) -> float:
        return self.ti_median / self.bti_median if self.bti_median > 0 else float("inf")

    def rows(self) -> List[dict]:
        out = []
        for rep, (ti, bti) in enumerate(zip(self.ti_times, self.bti_times)):
            out.append({"repeat": rep, "method": "all_pairs", "seconds": ti,
                        "conv_count": self.ti_convs})
            out.append({"repeat": rep, "method": "binary_tree", "seconds": bti,
                        "conv_count": self.bti_convs})
        return out


def bench_ti_bti(num_classes: int, extents, tree: Optional[ClassTree] = None,
                 repeats: int = 5, seed: int = 0) -> BenchReport:
    """Time both critical-map constructions on identical random label maps."""
    if num_classes < 2:
        raise InvalidArgument(f"need at least 2 classes, got {num_classes}")
    extents = tuple(int(e) for e in extents)
    if tree is None:
        tree = balanced_tree(num_classes)
    gen = torch.Generator().manual_seed(seed)
    labels = torch.randint(0, num_classes, (1,) + extents, generator=gen)
    report = BenchReport(num_classes=num_classes, extents=extents, repeats=repeats,
                         skipped_divisions=len(tree.skipped_divisions()))
    with torch.no_grad():
        # one untimed warmup each
        all_pairs_critical_map(labels, num_classes)
        tree_critical_map(labels, tree)
        for _ in range(repeats):
            budget = ConvBudget()
            t0 = time.perf_counter()
            ti_map = all_pairs_critical_map(labels, num_classes, budget)
            report.ti_times.append(time.perf_counter() - t0)
            report.ti_convs = budget.count

            budget = ConvBudget()
            t0 = time.perf_counter()
            bti_map = tree_critical_map(labels, tree, budget)
            report.bti_times.append(time.perf_counter() - t0)
            report.bti_convs = budget.count
        report.maps_equal = bool(torch.equal(ti_map, bti_map))
    return report


def format_bench_report(report: BenchReport) -> str:
    lines = [
        f"classes: {report.num_classes}   extents: {'x'.join(str(e) for e in report.extents)}",
        f"all-pairs map:    median {report.ti_median:.4f} s over {report.repeats} repeats, "
        f"{report.ti_convs} dilations",
        f"binary-tree map:  median {report.bti_median:.4f} s over {report.repeats} repeats, "
        f"{report.bti_convs} dilations",
        f"speedup: {report.speedup:.2f}x   maps equal: {report.maps_equal}",
    ]
    if report.skipped_divisions:
        lines.append(f"skipped divisions (budget credit): {report.skipped_divisions}")
    return "\n".join(lines)
