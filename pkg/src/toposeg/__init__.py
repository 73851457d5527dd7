"""Topology-aware graph-convolution segmentation, loss machinery and harness."""

from .bench import BenchReport, bench_ti_bti
from .blocks import FFN, GrapherCore, PooledGrapher, TopoStagePair, WindowGrapher
from .classtree import ClassTree, balanced_tree, load_tree, parse_tree
from .gradcheck import check_component
from .graphs import MaxRelativeGraphConv, PatchGraph, knn_graph, max_relative_conv
from .interaction import (ConvBudget, all_pairs_critical_map, pairwise_critical,
                          tree_critical_map)
from .losses import LossConfig, bti_loss, ce_loss, dice_loss, one_hot, pixel_loss, total_loss
from .metrics import dsc, hausdorff, metric_records
from .network import NetworkConfig, TopoUNet, build_network, format_parameter_report
from .phantoms import PhantomSpec, generate_phantom
from .pooling import PoolRecord, max_pool_with_indices, max_unpool
from .training import RunConfig, TrainingReport, train
from .windows import WindowLayout, window_partition, window_reverse

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "bench_ti_bti",
    "FFN", "GrapherCore", "PooledGrapher", "TopoStagePair", "WindowGrapher",
    "ClassTree", "balanced_tree", "load_tree", "parse_tree",
    "check_component",
    "MaxRelativeGraphConv", "PatchGraph", "knn_graph", "max_relative_conv",
    "ConvBudget", "all_pairs_critical_map", "pairwise_critical", "tree_critical_map",
    "LossConfig", "bti_loss", "ce_loss", "dice_loss", "one_hot", "pixel_loss", "total_loss",
    "dsc", "hausdorff", "metric_records",
    "NetworkConfig", "TopoUNet", "build_network", "format_parameter_report",
    "PhantomSpec", "generate_phantom",
    "PoolRecord", "max_pool_with_indices", "max_unpool",
    "RunConfig", "TrainingReport", "train",
    "WindowLayout", "window_partition", "window_reverse",
]
