"""Command line interface.

Subcommands: ``train``, ``eval``, ``bench-bti``, ``gradcheck``, ``phantom``.
Reports are written as TSV tables plus rendered PNG figures in the chosen
output directory.  Failures exit nonzero and print one machine-parseable
line ``error code=<CODE> message=...`` to stderr.
"""

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import plots
from .bench import bench_ti_bti, format_bench_report
from .classtree import load_tree
from .dataio import (list_cases, load_case, read_dataset_meta, save_case,
                     write_dataset_meta, write_tsv)
from .errors import ConfigurationError, ToposegError
from .gradcheck import REGISTRY, check_component
from .metrics import metric_records
from .network import format_parameter_report
from .phantoms import PhantomSpec, generate_phantom
from .training import (RunConfig, evaluate_network, forbidden_pair_violations,
                       load_checkpoint, network_from_checkpoint, train)


def _cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    report = train(run, resume_from=args.resume)
    print(f"finished {report.summary['iterations_run']} iterations")
    print(f"mean foreground DSC: {report.summary['mean_foreground_dsc']}")
    print(f"reports written to {report.output_dir}")
    return 0


def _cmd_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    net, run = network_from_checkpoint(payload)
    torch.set_num_threads(run.num_threads)
    net.eval()
    out_dir = args.out or os.path.join(args.data, "eval")
    os.makedirs(out_dir, exist_ok=True)
    try:
        meta = read_dataset_meta(args.data)
    except ToposegError:
        meta = {}
    forbidden = [tuple(p) for p in meta.get("forbidden_adjacency", [])]
    indices = list_cases(args.data)
    if not indices:
        raise ConfigurationError(f"no cases found in {args.data}")
    records = []
    total_violations = 0
    with torch.no_grad():
        for idx in indices:
            image, labels = load_case(args.data, idx)
            if tuple(image.shape) != tuple(run.network.input_extents):
                raise ConfigurationError(
                    f"case {idx} extents {image.shape} do not match the network "
                    f"({run.network.input_extents})"
                )
            x = torch.from_numpy(image).unsqueeze(0).unsqueeze(0)
            pred = net(x).argmax(dim=1)[0].numpy()
            records.extend(metric_records(pred, labels, range(run.network.num_classes),
                                          case=f"case_{idx:03d}",
                                          hd_percentile=args.hd_percentile))
            total_violations += forbidden_pair_violations(pred, forbidden)
            if idx == indices[0]:
                plots.save_overlay(image, labels, pred,
                                   os.path.join(out_dir, f"overlay_case{idx:03d}.png"))
    write_tsv(os.path.join(out_dir, "metrics.tsv"), records, ["case", "class", "dsc", "hd"])
    foreground = [r["dsc"] for r in records if r["class"] != 0]
    summary = {
        "cases": len(indices),
        "mean_foreground_dsc": float(np.mean(foreground)) if foreground else None,
        "forbidden_pair_violations": total_violations,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"evaluated {len(indices)} cases; mean foreground DSC "
          f"{summary['mean_foreground_dsc']}")
    print(f"reports written to {out_dir}")
    return 0


def _cmd_bench(args) -> int:
    tree = None
    if args.tree:
        tree = load_tree(args.tree, args.classes)
        print(tree.describe())
    extents = tuple([args.extent] * args.rank)
    report = bench_ti_bti(args.classes, extents, tree=tree, repeats=args.repeats,
                          seed=args.seed)
    print(format_bench_report(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_tsv(os.path.join(args.out, "bench.tsv"), report.rows(),
                  ["repeat", "method", "seconds", "conv_count"])
        plots.save_bench_figure(report, os.path.join(args.out, "bench.png"))
        print(f"reports written to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    names = [args.component] if args.component != "all" else sorted(REGISTRY)
    failed = False
    for name in names:
        result = check_component(name, tolerance=args.tolerance, seed=args.seed)
        print(result.line())
        failed = failed or not result.passed
    return 1 if failed else 0


def _cmd_phantom(args) -> int:
    try:
        with open(args.spec) as fh:
            spec_data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read phantom spec {args.spec}: {exc}") from exc
    spec = PhantomSpec.from_json(spec_data)
    os.makedirs(args.out, exist_ok=True)
    for idx in range(args.count):
        seed = int(np.random.SeedSequence((spec.seed, idx)).generate_state(1)[0])
        case_spec = PhantomSpec(kind=spec.kind, extents=spec.extents,
                                num_classes=spec.num_classes, noise_sigma=spec.noise_sigma,
                                forbidden_adjacency=list(spec.forbidden_adjacency),
                                seed=seed)
        image, labels = generate_phantom(case_spec)
        save_case(args.out, idx, image, labels)
        if idx == 0:
            plots.save_overlay(image, labels, labels,
                               os.path.join(args.out, "preview_case000.png"))
    meta = dict(spec_data)
    meta["cases"] = args.count
    write_dataset_meta(args.out, meta)
    print(f"wrote {args.count} case(s) to {args.out}")
    return 0


def _cmd_params(args) -> int:
    run = RunConfig.load(args.config)
    from .network import build_network

    net = build_network(run.network)
    print(format_parameter_report(net))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toposeg",
                                     description="topology-aware segmentation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on synthetic phantoms")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--hd-percentile", type=float, default=100.0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench-bti", help="time all-pairs vs binary-tree critical maps")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--extent", type=int, required=True)
    p.add_argument("--rank", type=int, default=3, choices=(2, 3))
    p.add_argument("--tree", default=None, help="class tree JSON")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for bench.tsv and bench.png")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--component", required=True,
                   help=f"one of: all, {', '.join(sorted(REGISTRY))}")
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("phantom", help="generate a phantom dataset")
    p.add_argument("--spec", required=True, help="phantom spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("params", help="print the per-stage parameter breakdown")
    p.add_argument("--config", required=True, help="run config JSON")
    p.set_defaults(func=_cmd_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToposegError as exc:
        print(f"error code={exc.code} message={exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort guard for the CLI
        print(f"error code=INTERNAL message={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
