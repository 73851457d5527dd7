import numpy as np
import pytest
import torch
from scipy import ndimage

from toposeg.errors import InvalidArgument
from toposeg.phantoms import PhantomSpec, generate_phantom

from oracles import critical_pixels_scan_fast


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(InvalidArgument, match="kind"):
            PhantomSpec(kind="donut", extents=(32, 32), num_classes=2)

    def test_rank_mismatch(self):
        with pytest.raises(InvalidArgument, match="extents"):
            PhantomSpec(kind="tube2d", extents=(32, 32, 32), num_classes=2)

    def test_minimum_extent(self):
        with pytest.raises(InvalidArgument, match="at least 16"):
            PhantomSpec(kind="tube2d", extents=(8, 32), num_classes=2)

    def test_two_class_kinds(self):
        with pytest.raises(InvalidArgument, match="two-class"):
            PhantomSpec(kind="tube2d", extents=(32, 32), num_classes=3)


class TestGeneration:
    def test_deterministic_per_seed(self):
        spec = PhantomSpec(kind="nested_rings2d", extents=(48, 48), num_classes=4,
                           forbidden_adjacency=[(0, 2), (0, 3), (1, 3)], seed=5)
        a_img, a_lab = generate_phantom(spec)
        b_img, b_lab = generate_phantom(spec)
        assert np.array_equal(a_img, b_img)
        assert np.array_equal(a_lab, b_lab)

    def test_different_seeds_differ(self):
        base = dict(kind="tube2d", extents=(32, 32), num_classes=2)
        a = generate_phantom(PhantomSpec(seed=1, **base))[1]
        b = generate_phantom(PhantomSpec(seed=2, **base))[1]
        assert not np.array_equal(a, b)

    def test_forbidden_pairs_absent_in_ground_truth(self):
        # verified with the independent neighborhood-scan oracle
        spec = PhantomSpec(kind="nested_rings2d", extents=(64, 64), num_classes=4,
                           forbidden_adjacency=[(0, 2), (0, 3), (1, 3)], seed=9)
        _, labels = generate_phantom(spec)
        for a, b in spec.forbidden_adjacency:
            assert not critical_pixels_scan_fast(labels, {a}, {b}).any()

    def test_tree_critical_map_empty_on_ground_truth(self):
        from toposeg.classtree import parse_tree
        from toposeg.interaction import tree_critical_map

        spec = PhantomSpec(kind="nested_rings2d", extents=(64, 64), num_classes=3,
                           forbidden_adjacency=[(0, 2)], seed=3)
        _, labels = generate_phantom(spec)
        tree = parse_tree({"structure": [[0, 2], 1], "unconstrained": [1]})
        crit = tree_critical_map(torch.from_numpy(labels).unsqueeze(0), tree)
        assert not crit.any()

    def test_tube_is_single_connected_component(self):
        for seed in range(5):
            spec = PhantomSpec(kind="tube2d", extents=(64, 64), num_classes=2, seed=seed)
            _, labels = generate_phantom(spec)
            _, count = ndimage.label(labels > 0, structure=np.ones((3, 3)))
            assert count == 1

    def test_branching_tree_connected(self):
        spec = PhantomSpec(kind="branching_tree3d", extents=(32, 32, 32),
                           num_classes=2, seed=2)
        _, labels = generate_phantom(spec)
        _, count = ndimage.label(labels > 0, structure=np.ones((3, 3, 3)))
        assert count == 1

    def test_all_classes_present(self):
        spec = PhantomSpec(kind="nested_shells3d", extents=(32, 32, 32),
                           num_classes=3, seed=1)
        _, labels = generate_phantom(spec)
        assert set(np.unique(labels)) == {0, 1, 2}

    def test_image_reflects_noise_level(self):
        quiet = PhantomSpec(kind="tube2d", extents=(32, 32), num_classes=2,
                            noise_sigma=0.0, seed=4)
        noisy = PhantomSpec(kind="tube2d", extents=(32, 32), num_classes=2,
                            noise_sigma=0.3, seed=4)
        img_q, lab = generate_phantom(quiet)
        img_n, _ = generate_phantom(noisy)
        assert img_n.std() > img_q.std()
