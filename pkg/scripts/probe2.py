"""Two-seed, two-lambda probe with per-case violation breakdown."""

import sys
import tempfile

import numpy as np
import torch

from toposeg.classtree import parse_tree
from toposeg.losses import LossConfig
from toposeg.network import NetworkConfig
from toposeg.phantoms import PhantomSpec
from toposeg.training import (OptimizerSpec, RunConfig, eval_phantoms,
                              evaluate_network, forbidden_pair_violations, train)
from toposeg.network import build_network
from toposeg.training import load_checkpoint, network_from_checkpoint


def make_run(seed, lam, iterations, noise, outdir, eval_cases=48):
    network = NetworkConfig.toy(2, 3, (64, 64), base_channels=8, num_conv_stages=2,
                                num_topo_stages=2, knn_schedule=(4, 8), num_heads=4)
    return RunConfig(
        network=network,
        loss=LossConfig(lambda_dice=1.0, lambda_bti=lam),
        tree=parse_tree({"structure": [[0, 2], 1], "unconstrained": [1]}),
        phantom=PhantomSpec(kind="nested_rings2d", extents=(64, 64), num_classes=3,
                            noise_sigma=noise, forbidden_adjacency=[(0, 2)], seed=21),
        optimizer=OptimizerSpec(lr=0.05, momentum=0.9),
        iterations=iterations, batch_size=6, seed=seed,
        output_dir=outdir, eval_cases=eval_cases, log_every=100,
    )


if __name__ == "__main__":
    noise = float(sys.argv[1]) if len(sys.argv) > 1 else 0.3
    iters = int(sys.argv[2]) if len(sys.argv) > 2 else 400
    for lam in (0.0, 1e-4):
        for seed in (0, 1):
            with tempfile.TemporaryDirectory() as tmp:
                run = make_run(seed, lam, iters, noise, tmp)
                report = train(run)
                net, _ = network_from_checkpoint(load_checkpoint(report.checkpoint_path))
                cases = eval_phantoms(run)
                per_case = []
                net.eval()
                with torch.no_grad():
                    for image, labels in cases:
                        x = torch.from_numpy(image).unsqueeze(0).unsqueeze(0)
                        pred = net(x).argmax(dim=1)[0].numpy()
                        per_case.append(forbidden_pair_violations(
                            pred, run.phantom.forbidden_adjacency))
            print(f"lam={lam} seed={seed} total={sum(per_case)} per_case={per_case} "
                  f"dsc={report.summary['mean_foreground_dsc']:.4f}", flush=True)
