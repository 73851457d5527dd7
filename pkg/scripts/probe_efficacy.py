"""Single-seed probe of baseline violation counts for phantom tuning."""

import sys
import tempfile

from toposeg.classtree import parse_tree
from toposeg.losses import LossConfig
from toposeg.network import NetworkConfig
from toposeg.phantoms import PhantomSpec
from toposeg.training import OptimizerSpec, RunConfig, train


def run_once(seed, lambda_bti, iterations, noise, eval_cases=16):
    network = NetworkConfig.toy(2, 3, (64, 64), base_channels=8, num_conv_stages=2,
                                num_topo_stages=2, knn_schedule=(4, 8), num_heads=4)
    with tempfile.TemporaryDirectory() as tmp:
        run = RunConfig(
            network=network,
            loss=LossConfig(lambda_dice=1.0, lambda_bti=lambda_bti),
            tree=parse_tree({"structure": [[0, 2], 1], "unconstrained": [1]}),
            phantom=PhantomSpec(kind="nested_rings2d", extents=(64, 64), num_classes=3,
                                noise_sigma=noise, forbidden_adjacency=[(0, 2)], seed=21),
            optimizer=OptimizerSpec(lr=0.05, momentum=0.9),
            iterations=iterations, batch_size=6, seed=seed,
            output_dir=tmp, eval_cases=eval_cases, log_every=100,
        )
        summary = train(run).summary
    return summary


if __name__ == "__main__":
    noise = float(sys.argv[1]) if len(sys.argv) > 1 else 0.35
    iters = int(sys.argv[2]) if len(sys.argv) > 2 else 300
    for lam in (0.0, 1e-4):
        s = run_once(0, lam, iters, noise)
        print(f"lam={lam}: violations={s['forbidden_pair_violations']} "
              f"dsc={s['mean_foreground_dsc']:.4f} critical-ish", flush=True)
