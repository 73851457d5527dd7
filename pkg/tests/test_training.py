import os

import numpy as np
import pytest
import torch

from toposeg.errors import ConfigurationError, TrainingDivergence
from toposeg.losses import LossConfig
from toposeg.network import NetworkConfig
from toposeg.phantoms import PhantomSpec
from toposeg.training import (OptimizerSpec, RunConfig, forbidden_pair_violations,
                              load_checkpoint, network_from_checkpoint, train)

from oracles import adjacent_pair_count


def tiny_run(tmp_path, name, iterations=4, seed=0, lambda_bti=0.0, **overrides):
    network = NetworkConfig.toy(2, 2, (16, 16), base_channels=8, num_conv_stages=2,
                                num_topo_stages=2, knn_schedule=(2, 3), num_heads=2,
                                window_size=3)
    params = dict(
        network=network,
        loss=LossConfig(lambda_dice=1.0, lambda_bti=lambda_bti),
        phantom=PhantomSpec(kind="tube2d", extents=(16, 16), num_classes=2, seed=7),
        optimizer=OptimizerSpec(lr=0.02, momentum=0.9),
        iterations=iterations,
        batch_size=2,
        seed=seed,
        output_dir=str(tmp_path / name),
        eval_cases=2,
    )
    params.update(overrides)
    return RunConfig(**params)


class TestRunConfig:
    def test_extent_mismatch_rejected(self, tmp_path):
        network = NetworkConfig.toy(2, 2, (32, 32), base_channels=8, num_heads=2)
        with pytest.raises(ConfigurationError, match="extents"):
            RunConfig(network=network, loss=LossConfig(lambda_bti=0),
                      phantom=PhantomSpec(kind="tube2d", extents=(16, 16),
                                          num_classes=2))

    def test_json_roundtrip(self, tmp_path):
        run = tiny_run(tmp_path, "json")
        again = RunConfig.from_json(run.to_json())
        assert again.network == run.network
        assert again.phantom == run.phantom
        assert again.iterations == run.iterations

    def test_unknown_keys_rejected(self, tmp_path):
        run = tiny_run(tmp_path, "bad")
        data = run.to_json()
        data["warmup"] = 10
        with pytest.raises(ConfigurationError, match="unknown run config"):
            RunConfig.from_json(data)

    def test_balanced_tree_supplied_when_needed(self, tmp_path):
        run = tiny_run(tmp_path, "tree", lambda_bti=1e-4)
        assert run.tree is not None
        assert run.tree.num_classes == 2


class TestTraining:
    def test_zero_iterations_reports_initial_metrics(self, tmp_path):
        run = tiny_run(tmp_path, "zero", iterations=0)
        report = train(run)
        assert report.summary["iterations_run"] == 0
        assert report.summary["final_loss"] is None
        assert len(report.metrics) == 2 * run.eval_cases
        assert os.path.exists(os.path.join(run.output_dir, "metrics.tsv"))

    def test_two_runs_bit_identical(self, tmp_path):
        report_a = train(tiny_run(tmp_path, "a", iterations=3))
        report_b = train(tiny_run(tmp_path, "b", iterations=3))
        assert report_a.history == report_b.history
        assert report_a.metrics == report_b.metrics
        text_a = open(os.path.join(report_a.output_dir, "history.tsv")).read()
        text_b = open(os.path.join(report_b.output_dir, "history.tsv")).read()
        assert text_a == text_b

    def test_checkpoint_resume_matches_uninterrupted(self, tmp_path):
        # same config, one run interrupted at iteration 3 and resumed
        full = train(tiny_run(tmp_path, "full", iterations=6, checkpoint_every=3))
        resumed_run = tiny_run(tmp_path, "resumed", iterations=6)
        resumed = train(resumed_run,
                        resume_from=os.path.join(full.output_dir, "checkpoint_00003.pt"))
        state_full = load_checkpoint(full.checkpoint_path)["model"]
        state_resumed = load_checkpoint(resumed.checkpoint_path)["model"]
        assert state_full.keys() == state_resumed.keys()
        for key in state_full:
            assert torch.equal(state_full[key], state_resumed[key]), key

    def test_divergence_dumps_batch(self, tmp_path, monkeypatch):
        run = tiny_run(tmp_path, "nan", iterations=2)

        def poisoned(f, g, tree, cfg, validate=False):
            bad = torch.full((), float("nan"), dtype=f.dtype)
            return bad * f.sum(), {"total": float("nan"), "ce": 0.0, "dice": 0.0,
                                   "bti": 0.0, "conv_count": 0, "critical_voxels": 0}

        monkeypatch.setattr("toposeg.training.total_loss", poisoned)
        with pytest.raises(TrainingDivergence, match="iteration 0"):
            train(run)
        dumps = [d for d in os.listdir(run.output_dir) if d.startswith("divergence_iter")]
        assert dumps, "offending batch directory missing"

    def test_checkpoint_reconstructs_network(self, tmp_path):
        run = tiny_run(tmp_path, "reload", iterations=2)
        report = train(run)
        net, restored = network_from_checkpoint(load_checkpoint(report.checkpoint_path))
        assert restored.network == run.network
        x = torch.randn(1, 1, 16, 16, generator=torch.Generator().manual_seed(0))
        net.eval()
        with torch.no_grad():
            assert net(x).shape == (1, 2, 16, 16)

    def test_report_files_rendered(self, tmp_path):
        run = tiny_run(tmp_path, "files", iterations=2)
        train(run)
        for name in ("history.tsv", "metrics.tsv", "report.json", "checkpoint.pt",
                     "loss_curves.png", "overlay_case000.png"):
            assert os.path.exists(os.path.join(run.output_dir, name)), name


class TestViolationCounting:
    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(3)
        for rank in (2, 3):
            labels = rng.integers(0, 4, size=(12,) * rank)
            pairs = [(0, 2), (1, 3)]
            expected = sum(adjacent_pair_count(labels, p) for p in pairs)
            assert forbidden_pair_violations(labels, pairs) == expected

    def test_no_pairs_no_violations(self):
        labels = np.zeros((8, 8), dtype=int)
        assert forbidden_pair_violations(labels, []) == 0
