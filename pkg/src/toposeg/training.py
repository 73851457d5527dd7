"""Deterministic training and evaluation on synthetic phantoms.

A run is fully described by a RunConfig: the seed determines network
initialization and the phantom drawn at every iteration, so two runs with
the same config produce bit-identical reports and a checkpoint can resume
mid-stream without drift.  Reports are TSV tables plus rendered figures in
the run's output directory.
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np
import torch

from . import plots
from .classtree import ClassTree, balanced_tree, parse_tree
from .dataio import save_case, write_tsv
from .errors import ConfigurationError, TrainingDivergence
from .losses import LossConfig, one_hot, total_loss
from .metrics import metric_records
from .network import NetworkConfig, TopoUNet, build_network
from .phantoms import PhantomSpec, generate_phantom

HISTORY_COLUMNS = ["iteration", "lr", "total", "ce", "dice", "bti", "conv_count",
                   "critical_voxels"]
METRIC_COLUMNS = ["case", "class", "dsc", "hd"]


@dataclass
class OptimizerSpec:
    kind: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "poly"
    power: float = 0.9

    def __post_init__(self):
        if self.kind != "sgd":
            raise ConfigurationError(f"unsupported optimizer kind {self.kind!r}")
        if self.schedule not in ("poly", "const"):
            raise ConfigurationError(f"unsupported schedule {self.schedule!r}")


@dataclass
class RunConfig:
    network: NetworkConfig
    loss: LossConfig
    phantom: PhantomSpec
    tree: Optional[ClassTree] = None
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    iterations: int = 500
    batch_size: int = 6
    seed: int = 0
    output_dir: str = "run_output"
    eval_cases: int = 4
    log_every: int = 1
    checkpoint_every: int = 0
    num_threads: int = 1
    hd_percentile: float = 100.0

    def __post_init__(self):
        if self.tree is None and self.loss.lambda_bti > 0:
            self.tree = balanced_tree(self.network.num_classes)
        if self.network.num_classes != self.phantom.num_classes:
            raise ConfigurationError(
                f"network has {self.network.num_classes} classes, phantom "
                f"{self.phantom.num_classes}"
            )
        if tuple(self.network.input_extents) != tuple(self.phantom.extents):
            raise ConfigurationError(
                f"network extents {self.network.input_extents} differ from phantom "
                f"extents {self.phantom.extents}"
            )
        if self.tree is not None and self.tree.num_classes != self.network.num_classes:
            raise ConfigurationError("class tree size does not match the class count")

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        data = dict(data)
        phantom = PhantomSpec.from_json(data.pop("phantom"))
        net_data = dict(data.pop("network", {}))
        net_data.setdefault("spatial_rank", len(phantom.extents))
        net_data.setdefault("num_classes", phantom.num_classes)
        net_data.setdefault("input_extents", list(phantom.extents))
        network = NetworkConfig.from_json(net_data)
        loss_data = dict(data.pop("loss", {}))
        if "lambda_bti" not in loss_data:
            loss_data["lambda_bti"] = LossConfig.default_for_rank(network.spatial_rank).lambda_bti
        loss = LossConfig(**loss_data)
        tree = None
        if "tree" in data:
            tree_cfg = data.pop("tree")
            if tree_cfg is not None:
                tree = parse_tree(tree_cfg, network.num_classes)
        optimizer = OptimizerSpec(**data.pop("optimizer", {}))
        known = {f for f in cls.__dataclass_fields__} - {"network", "loss", "phantom",
                                                         "tree", "optimizer"}
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown run config keys: {sorted(extra)}")
        return cls(network=network, loss=loss, phantom=phantom, tree=tree,
                   optimizer=optimizer, **data)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_json(data)

    def to_json(self) -> dict:
        data = {
            "network": self.network.to_json(),
            "loss": asdict(self.loss),
            "phantom": asdict(self.phantom),
            "optimizer": asdict(self.optimizer),
        }
        if self.tree is not None:
            data["tree"] = {
                "structure": _tree_structure(self.tree),
                "unconstrained": sorted(self.tree.unconstrained),
            }
        for key in ("iterations", "batch_size", "seed", "output_dir", "eval_cases",
                    "log_every", "checkpoint_every", "num_threads", "hd_percentile"):
            data[key] = getattr(self, key)
        return data


def _tree_structure(tree: ClassTree):
    """Rebuild the nested-list structure from the division list."""
    built = {(c,): c for c in range(tree.num_classes)}
    for div in tree.divisions:
        node = [built[div.left], built[div.right]]
        if div.kind != "exclusion" or div.name:
            node = {"left": built[div.left], "right": built[div.right],
                    "kind": div.kind, "name": div.name}
        built[tuple(sorted(div.left + div.right))] = node
    return built[tuple(range(tree.num_classes))]


@dataclass
class TrainingReport:
    history: List[dict]
    metrics: List[dict]
    summary: dict
    checkpoint_path: str
    output_dir: str


def phantom_for_iteration(spec: PhantomSpec, run_seed: int, iteration: int,
                          sample: int) -> PhantomSpec:
    """The phantom drawn for one batch slot; pure function of the indices."""
    seed = int(np.random.SeedSequence((run_seed, iteration, sample)).generate_state(1)[0])
    return PhantomSpec(kind=spec.kind, extents=spec.extents, num_classes=spec.num_classes,
                       noise_sigma=spec.noise_sigma,
                       forbidden_adjacency=list(spec.forbidden_adjacency), seed=seed)


def _batch(run: RunConfig, iteration: int) -> Tuple[torch.Tensor, torch.Tensor]:
    images, labels = [], []
    for sample in range(run.batch_size):
        spec = phantom_for_iteration(run.phantom, run.seed, iteration, sample)
        img, lab = generate_phantom(spec)
        images.append(torch.from_numpy(img))
        labels.append(torch.from_numpy(lab))
    return torch.stack(images).unsqueeze(1), torch.stack(labels)


EVAL_STREAM_OFFSET = 10 ** 9  # keeps evaluation phantoms off the training stream


def eval_phantoms(run: RunConfig) -> List[Tuple[np.ndarray, np.ndarray]]:
    cases = []
    for sample in range(run.eval_cases):
        spec = phantom_for_iteration(run.phantom, run.seed, EVAL_STREAM_OFFSET + sample, sample)
        cases.append(generate_phantom(spec))
    return cases


def _learning_rate(opt: OptimizerSpec, iteration: int, total: int) -> float:
    if opt.schedule == "const" or total <= 1:
        return opt.lr
    return opt.lr * (1.0 - iteration / total) ** opt.power


def save_checkpoint(path: str, net: TopoUNet, optimizer, iteration: int,
                    run: RunConfig) -> None:
    torch.save({
        "model": net.state_dict(),
        "optimizer": optimizer.state_dict(),
        "iteration": iteration,
        "run_config": run.to_json(),
    }, path)


def load_checkpoint(path: str):
    try:
        return torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise ConfigurationError(f"cannot load checkpoint {path}: {exc}") from exc


def network_from_checkpoint(payload) -> Tuple[TopoUNet, RunConfig]:
    run = RunConfig.from_json(payload["run_config"])
    net = build_network(run.network)
    net.load_state_dict(payload["model"])
    return net, run


def forbidden_pair_violations(labels: np.ndarray, pairs) -> int:
    """Moore-adjacent voxel pairs whose labels form a forbidden pair."""
    total = 0
    rank = labels.ndim
    offsets = []
    for off in np.ndindex((3,) * rank):
        off = tuple(o - 1 for o in off)
        if off > (0,) * rank:  # half of the directions; each pair counted once
            offsets.append(off)
    for a, b in pairs:
        for off in offsets:
            src = tuple(slice(max(0, -o), labels.shape[ax] - max(0, o))
                        for ax, o in enumerate(off))
            dst = tuple(slice(max(0, o), labels.shape[ax] - max(0, -o))
                        for ax, o in enumerate(off))
            total += int(((labels[dst] == a) & (labels[src] == b)).sum())
            total += int(((labels[dst] == b) & (labels[src] == a)).sum())
    return total


def evaluate_network(net: TopoUNet, cases, run: RunConfig):
    """Per-case predictions, metric records and forbidden-pair counts."""
    net.eval()
    records = []
    predictions = []
    violations = 0
    with torch.no_grad():
        for idx, (image, labels) in enumerate(cases):
            x = torch.from_numpy(image).unsqueeze(0).unsqueeze(0)
            logits = net(x)
            pred = logits.argmax(dim=1)[0].numpy()
            predictions.append(pred)
            records.extend(metric_records(pred, labels, range(run.network.num_classes),
                                          case=f"case_{idx:03d}",
                                          hd_percentile=run.hd_percentile))
            violations += forbidden_pair_violations(pred, run.phantom.forbidden_adjacency)
    net.train()
    return records, violations, predictions


def _dump_divergent_batch(run: RunConfig, iteration: int, images, labels) -> str:
    dump_dir = os.path.join(run.output_dir, f"divergence_iter{iteration:05d}")
    for i in range(images.shape[0]):
        save_case(dump_dir, i, images[i, 0].numpy(), labels[i].numpy())
    return dump_dir


def train(run: RunConfig, resume_from: Optional[str] = None) -> TrainingReport:
    torch.set_num_threads(run.num_threads)
    os.makedirs(run.output_dir, exist_ok=True)
    torch.manual_seed(run.seed)
    net = build_network(run.network)
    optimizer = torch.optim.SGD(net.parameters(), lr=run.optimizer.lr,
                                momentum=run.optimizer.momentum,
                                weight_decay=run.optimizer.weight_decay)
    start = 0
    if resume_from:
        payload = load_checkpoint(resume_from)
        net.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        start = payload["iteration"]
    net.train()

    history: List[dict] = []
    for iteration in range(start, run.iterations):
        lr = _learning_rate(run.optimizer, iteration, run.iterations)
        for group in optimizer.param_groups:
            group["lr"] = lr
        images, labels = _batch(run, iteration)
        logits = net(images)
        f = torch.softmax(logits, dim=1)
        g = one_hot(labels, run.network.num_classes, dtype=f.dtype)
        loss, diag = total_loss(f, g, run.tree, run.loss)
        if not math.isfinite(diag["total"]):
            dump = _dump_divergent_batch(run, iteration, images, labels)
            raise TrainingDivergence(
                f"non-finite loss at iteration {iteration}; offending batch dumped to {dump}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if iteration % run.log_every == 0 or iteration == run.iterations - 1:
            history.append({"iteration": iteration, "lr": lr, "total": diag["total"],
                            "ce": diag["ce"], "dice": diag["dice"], "bti": diag["bti"],
                            "conv_count": diag["conv_count"],
                            "critical_voxels": diag["critical_voxels"]})
        if run.checkpoint_every and (iteration + 1) % run.checkpoint_every == 0:
            save_checkpoint(os.path.join(run.output_dir, f"checkpoint_{iteration + 1:05d}.pt"),
                            net, optimizer, iteration + 1, run)

    checkpoint_path = os.path.join(run.output_dir, "checkpoint.pt")
    save_checkpoint(checkpoint_path, net, optimizer, run.iterations, run)

    cases = eval_phantoms(run)
    records, violations, predictions = evaluate_network(net, cases, run)

    foreground = [r["dsc"] for r in records if r["class"] != 0]
    summary = {
        "iterations_run": run.iterations - start,
        "final_loss": history[-1]["total"] if history else None,
        "mean_foreground_dsc": float(np.mean(foreground)) if foreground else None,
        "forbidden_pair_violations": violations,
        "parameters": net.num_parameters(),
        "knn_clamp_events": net.clamp_events,
        "eval_cases": run.eval_cases,
        "skipped_divisions": len(run.tree.skipped_divisions()) if run.tree else 0,
    }

    write_tsv(os.path.join(run.output_dir, "history.tsv"), history, HISTORY_COLUMNS)
    write_tsv(os.path.join(run.output_dir, "metrics.tsv"), records, METRIC_COLUMNS)
    with open(os.path.join(run.output_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    plots.save_loss_curves(history, os.path.join(run.output_dir, "loss_curves.png"))
    if cases:
        image, labels = cases[0]
        plots.save_overlay(image, labels, predictions[0],
                           os.path.join(run.output_dir, "overlay_case000.png"))
    return TrainingReport(history=history, metrics=records, summary=summary,
                          checkpoint_path=checkpoint_path, output_dir=run.output_dir)
