"""Acceptance suite: one test per criterion, one printed PASS line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The slow criteria are
the two training runs (single-thread CPU); the whole suite stays well under
half an hour on a laptop-class machine.
"""

import math
import statistics
import time

import numpy as np
import pytest
import torch

from toposeg.bench import bench_ti_bti
from toposeg.blocks import TopoStagePair
from toposeg.classtree import balanced_tree, parse_tree
from toposeg.gradcheck import check_component
from toposeg.graphs import knn_graph
from toposeg.interaction import ConvBudget, all_pairs_critical_map, tree_critical_map
from toposeg.losses import (LossConfig, bti_loss, ce_loss, dice_loss, one_hot,
                            pixel_loss, total_loss)
from toposeg.network import NetworkConfig, build_network
from toposeg.phantoms import PhantomSpec
from toposeg.pooling import max_pool_with_indices, max_unpool
from toposeg.training import OptimizerSpec, RunConfig, train
from toposeg.windows import window_partition, window_reverse

from oracles import critical_pixels_scan_fast, knn_brute_force, max_pool_2x_loops


def _report(number: int, name: str, detail: str = "") -> None:
    suffix = f"  [{detail}]" if detail else ""
    print(f"\nACCEPTANCE {number:2d} {name}: PASS{suffix}")


class TestAcceptance:
    def test_01_convolution_count_exactness(self):
        t0 = time.perf_counter()
        gen = torch.Generator().manual_seed(0)
        for c in range(2, 21):
            labels = torch.randint(0, c, (1, 8, 8), generator=gen)
            budget_ti, budget_bti = ConvBudget(), ConvBudget()
            all_pairs_critical_map(labels, c, budget_ti)
            tree_critical_map(labels, balanced_tree(c), budget_bti)
            assert budget_ti.count == c * (c - 1), f"c={c}"
            assert budget_bti.count == 2 * (c - 1), f"c={c}"
            if c == 18:
                assert (budget_ti.count, budget_bti.count) == (306, 34)
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        _report(1, "convolution-count exactness", f"c=2..20 exact, {elapsed:.2f}s")

    def test_02_binary_tree_speed_direction(self):
        report = bench_ti_bti(18, (64, 64, 64), repeats=5, seed=0)
        ratio = report.bti_median / report.ti_median
        assert report.ti_convs == 306 and report.bti_convs == 34
        assert report.maps_equal
        assert ratio <= 0.5, f"ratio {ratio:.3f}"
        _report(2, "binary-tree speed direction",
                f"median {report.bti_median:.2f}s vs {report.ti_median:.2f}s, "
                f"ratio {ratio:.3f} <= 0.5")

    def test_03_knn_oracle_equivalence(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n = int(rng.integers(8, 513))
            d = int(rng.integers(2, 33))
            k = int(rng.integers(1, min(16, n - 1) + 1))
            feats = rng.standard_normal((n, d))
            expected = knn_brute_force(feats, k)
            got = knn_graph(torch.from_numpy(feats).unsqueeze(0), k).edge_index[0]
            assert np.array_equal(got.numpy(), expected), f"trial {trial} (n={n}, d={d}, k={k})"
        _report(3, "k-NN oracle equivalence", "100 random node sets, edge-for-edge")

    def test_04_window_round_trip(self):
        rng = np.random.default_rng(7)
        gen = torch.Generator().manual_seed(7)
        for trial in range(200):
            rank = int(rng.integers(2, 4))
            extents = tuple(int(rng.integers(1, 14)) for _ in range(rank))
            m = int(rng.integers(2, 9))
            shifted = bool(rng.integers(0, 2))
            x = torch.randn((2, 3) + extents, generator=gen)
            tokens, layout = window_partition(x, m, shifted)
            assert torch.equal(window_reverse(tokens, layout), x), \
                f"trial {trial} extents={extents} m={m} shifted={shifted}"
        _report(4, "window partition round trip", "200 random combinations, bit-exact")

    def test_05_pool_unpool_identity(self):
        rng = np.random.default_rng(3)
        gen = torch.Generator().manual_seed(3)
        for trial in range(50):
            rank = int(rng.integers(2, 4))
            hi = 13 if rank == 2 else 9
            extents = tuple(int(rng.integers(2, hi)) for _ in range(rank))
            x = torch.randn((1, 2) + extents, generator=gen, dtype=torch.float64)
            pooled_ref, idx_ref = max_pool_2x_loops(x[0].numpy())
            pooled, record = max_pool_with_indices(x)
            np.testing.assert_allclose(pooled[0].numpy(), pooled_ref)
            np.testing.assert_array_equal(
                record.indices[0].numpy().reshape(idx_ref.shape), idx_ref)
            up = max_unpool(pooled, record)
            flat_up = up.flatten(2)
            mask = torch.ones_like(flat_up, dtype=torch.bool)
            mask.scatter_(2, record.indices, False)
            assert bool((flat_up[mask] == 0).all())
            assert torch.equal(torch.gather(x.flatten(2), 2, record.indices),
                               torch.gather(flat_up, 2, record.indices))
        _report(5, "pool/unpool identity", "50 random maps vs loop oracle")

    def test_06_gradient_checks(self):
        components = ["ffn", "max_relative_conv", "max_pool", "pooled_grapher",
                      "window_grapher", "stage_pair", "total_loss"]
        t0 = time.perf_counter()
        details = []
        for name in components:
            result = check_component(name)
            assert result.passed, result.line()
            assert result.max_rel_err < 1e-4
            details.append(f"{name} {result.max_rel_err:.1e}")
        elapsed = time.perf_counter() - t0
        assert elapsed < 300.0
        _report(6, "finite-difference gradient checks",
                "; ".join(details) + f"; {elapsed:.0f}s")

    def test_07_residual_identity(self):
        t0 = time.perf_counter()
        for rank, extents in ((3, (4, 4, 4)), (2, (6, 6))):
            pair = TopoStagePair(8, k=3, num_heads=2, window_size=4, rank=rank,
                                 do_pool=True)
            with torch.no_grad():
                for p in pair.parameters():
                    p.zero_()
            x = torch.randn((2, 8) + extents, generator=torch.Generator().manual_seed(rank))
            assert torch.equal(pair(x), x)
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        _report(7, "zero-weight residual identity", f"bit-exact, {elapsed:.2f}s")

    def test_08_tree_map_oracle(self):
        rng = np.random.default_rng(8)
        trees = [balanced_tree(4), parse_tree([[[0, 1], 2], 3])]
        for trial in range(50):
            rank = 2 if trial % 2 == 0 else 3
            hi = 33 if rank == 2 else 29
            extents = tuple(int(rng.integers(24, hi)) for _ in range(rank))
            labels = rng.integers(0, 4, size=extents)
            tree = trees[trial % len(trees)]
            got = tree_critical_map(torch.from_numpy(labels).unsqueeze(0), tree)
            expected = np.zeros(extents, dtype=bool)
            for div in tree.divisions:
                expected |= critical_pixels_scan_fast(labels, set(div.left), set(div.right))
            assert np.array_equal(got[0].numpy().astype(bool), expected), f"trial {trial}"
        _report(8, "tree critical-map oracle", "50 random label maps, exact")

    def test_09_loss_identities(self):
        t0 = time.perf_counter()
        gen = torch.Generator().manual_seed(9)
        c = 4
        logits = torch.randn(2, c, 12, 12, generator=gen, dtype=torch.float64)
        f = torch.softmax(logits, dim=1)
        labels = torch.randint(0, c, (2, 12, 12), generator=gen)
        g = one_hot(labels, c, dtype=torch.float64)

        empty = torch.zeros(2, 12, 12, dtype=torch.float64)
        assert float(bti_loss(f, g, empty)) == 0.0

        ones = torch.ones(2, 12, 12, dtype=torch.float64)
        assert float(bti_loss(f, g, ones)) == float(pixel_loss(f, g))

        cfg = LossConfig(lambda_dice=1.0, lambda_bti=0.0)
        loss, _ = total_loss(f, g, None, cfg)
        assert float(loss) == float(ce_loss(f, g)) + float(dice_loss(f, g))

        uniform = torch.full((1, c, 10, 10), 1.0 / c, dtype=torch.float64)
        gu = one_hot(torch.randint(0, c, (1, 10, 10), generator=gen), c,
                     dtype=torch.float64)
        assert abs(float(ce_loss(uniform, gu)) - math.log(c)) < 1e-6
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        _report(9, "loss gating identities", f"{elapsed:.2f}s")

    def _tube_run(self, tmp_path, name, iterations, seed=0):
        return RunConfig(
            network=NetworkConfig.toy(2, 2, (64, 64), base_channels=8,
                                      num_conv_stages=2, num_topo_stages=2,
                                      knn_schedule=(4, 8), num_heads=4),
            loss=LossConfig(lambda_dice=1.0, lambda_bti=0.0),
            phantom=PhantomSpec(kind="tube2d", extents=(64, 64), num_classes=2,
                                noise_sigma=0.05, seed=11),
            optimizer=OptimizerSpec(lr=0.05, momentum=0.9),
            iterations=iterations, batch_size=6, seed=seed,
            output_dir=str(tmp_path / name), eval_cases=4, log_every=25,
        )

    def test_10_desk_scale_training(self, tmp_path):
        t0 = time.perf_counter()
        report = train(self._tube_run(tmp_path, "tube", iterations=300))
        dsc = report.summary["mean_foreground_dsc"]
        assert dsc >= 0.95, f"foreground DSC {dsc:.4f}"
        # determinism of the pipeline, demonstrated on a short double run
        short_a = train(self._tube_run(tmp_path, "det_a", iterations=25))
        short_b = train(self._tube_run(tmp_path, "det_b", iterations=25))
        assert short_a.history == short_b.history
        assert short_a.metrics == short_b.metrics
        elapsed = time.perf_counter() - t0
        assert elapsed < 600.0
        _report(10, "desk-scale training",
                f"foreground DSC {dsc:.4f} >= 0.95 in 300/500 iterations, "
                f"deterministic, {elapsed:.0f}s")

    def _rings_run(self, tmp_path, name, lambda_bti, seed):
        return RunConfig(
            network=NetworkConfig.toy(2, 3, (64, 64), base_channels=8,
                                      num_conv_stages=2, num_topo_stages=2,
                                      knn_schedule=(4, 8), num_heads=4),
            loss=LossConfig(lambda_dice=1.0, lambda_bti=lambda_bti),
            tree=parse_tree({"structure": [[0, 2], 1], "unconstrained": [1]}),
            phantom=PhantomSpec(kind="nested_rings2d", extents=(64, 64), num_classes=3,
                                noise_sigma=0.2, forbidden_adjacency=[(0, 2)], seed=21),
            optimizer=OptimizerSpec(lr=0.05, momentum=0.9),
            iterations=300, batch_size=6, seed=seed,
            output_dir=str(tmp_path / name), eval_cases=8, log_every=50,
        )

    def test_11_topology_efficacy(self, tmp_path):
        t0 = time.perf_counter()
        default_2d = LossConfig.default_for_rank(2).lambda_bti
        violations = {0.0: [], default_2d: []}
        for lam in violations:
            for seed in (0, 1, 2):
                report = train(self._rings_run(tmp_path, f"lam{lam}_s{seed}", lam, seed))
                violations[lam].append(report.summary["forbidden_pair_violations"])
        base = statistics.median(violations[0.0])
        gated = statistics.median(violations[default_2d])
        elapsed = time.perf_counter() - t0
        assert elapsed < 1800.0
        assert gated < base, (
            f"violations with lambda={default_2d}: {violations[default_2d]} "
            f"(median {gated}) vs lambda=0: {violations[0.0]} (median {base})"
        )
        _report(11, "topology-loss efficacy",
                f"median violations {base} -> {gated} over 3 seeds, {elapsed:.0f}s")

    def test_12_parameter_accounting(self):
        reference = 23_060_000
        net = build_network(NetworkConfig.paper_default_3d())
        total = net.num_parameters()
        assert 0.8 * reference <= total <= 1.2 * reference, f"{total:,}"
        lines = [f"{name}: {count:,}" for name, count in net.parameter_report()]
        print("\n".join(lines))
        _report(12, "parameter accounting",
                f"{total:,} params within +-20% of {reference:,}")
