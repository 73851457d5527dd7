"""One-off calibration sweep for the topology-efficacy acceptance run.

Trains the rings phantom with and without the interaction loss over several
seeds and prints the forbidden-pair violation counts at convergence.
"""

import json
import sys
import tempfile

from toposeg.classtree import parse_tree
from toposeg.losses import LossConfig
from toposeg.network import NetworkConfig
from toposeg.phantoms import PhantomSpec
from toposeg.training import OptimizerSpec, RunConfig, train


def run_once(seed, lambda_bti, iterations, noise, outdir):
    network = NetworkConfig.toy(2, 3, (64, 64), base_channels=8, num_conv_stages=2,
                                num_topo_stages=2, knn_schedule=(4, 8), num_heads=4)
    run = RunConfig(
        network=network,
        loss=LossConfig(lambda_dice=1.0, lambda_bti=lambda_bti),
        tree=parse_tree({"structure": [[0, 2], 1], "unconstrained": [1]}),
        phantom=PhantomSpec(kind="nested_rings2d", extents=(64, 64), num_classes=3,
                            noise_sigma=noise, forbidden_adjacency=[(0, 2)], seed=21),
        optimizer=OptimizerSpec(lr=0.05, momentum=0.9),
        iterations=iterations,
        batch_size=6,
        seed=seed,
        output_dir=outdir,
        eval_cases=8,
        log_every=50,
    )
    report = train(run)
    return report.summary


def main():
    iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
    noise = float(sys.argv[2]) if len(sys.argv) > 2 else 0.25
    seeds = [0, 1, 2]
    results = {}
    for lam in (0.0, 1e-4):
        for seed in seeds:
            with tempfile.TemporaryDirectory() as tmp:
                summary = run_once(seed, lam, iterations, noise, tmp)
            key = f"lam={lam} seed={seed}"
            results[key] = {
                "violations": summary["forbidden_pair_violations"],
                "dsc": round(summary["mean_foreground_dsc"], 4),
            }
            print(key, results[key], flush=True)
    v0 = sorted(results[f"lam=0.0 seed={s}"]["violations"] for s in seeds)
    v1 = sorted(results[f"lam=0.0001 seed={s}"]["violations"] for s in seeds)
    print("medians: lam0", v0[1], " lam1e-4", v1[1])
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
