import math

import numpy as np
import pytest

from toposeg.errors import InvalidArgument
from toposeg.metrics import dsc, hausdorff, metric_records, surface_mask

from oracles import surface_distances_brute, surface_voxels


class TestDice:
    def test_identical_maps(self):
        labels = np.random.default_rng(0).integers(0, 3, size=(12, 12))
        for cls in range(3):
            assert dsc(labels, labels, cls) == 1.0

    def test_analytic_one_dimensional_case(self):
        pred = np.array([1, 1, 0, 0])
        gt = np.array([1, 0, 0, 0])
        assert math.isclose(dsc(pred, gt, 1), 2.0 / 3.0)

    def test_empty_conventions(self):
        a = np.zeros((8, 8), dtype=int)
        b = np.zeros((8, 8), dtype=int)
        assert dsc(a, b, 1) == 1.0
        b[2, 2] = 1
        assert dsc(a, b, 1) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 2, size=(10, 10))
        b = rng.integers(0, 2, size=(10, 10))
        assert dsc(a, b, 1) == dsc(b, a, 1)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            dsc(np.zeros((4, 4)), np.zeros((5, 5)), 0)


class TestHausdorff:
    def test_identical_maps_zero(self):
        labels = np.random.default_rng(2).integers(0, 2, size=(10, 10))
        assert hausdorff(labels, labels, 1) == 0.0

    def test_empty_conventions(self):
        a = np.zeros((8, 8), dtype=int)
        assert hausdorff(a, a, 1) == 0.0
        b = a.copy()
        b[1, 1] = 1
        assert math.isclose(hausdorff(a, b, 1), math.sqrt(128.0))

    def test_surface_extraction_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(4):
            mask = rng.integers(0, 2, size=(9, 9)).astype(bool)
            np.testing.assert_array_equal(surface_mask(mask), surface_voxels(mask))

    def test_matches_brute_force_distances(self):
        rng = np.random.default_rng(4)
        for _ in range(3):
            shape = (16, 16, 16)
            pred = np.zeros(shape, dtype=int)
            gt = np.zeros(shape, dtype=int)
            ca, cb = rng.integers(4, 12, size=3), rng.integers(4, 12, size=3)
            ra, rb = rng.integers(2, 5), rng.integers(2, 5)
            grid = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"))
            pred[np.sqrt(((grid - ca[:, None, None, None]) ** 2).sum(0)) <= ra] = 1
            gt[np.sqrt(((grid - cb[:, None, None, None]) ** 2).sum(0)) <= rb] = 1
            distances = surface_distances_brute(pred == 1, gt == 1)
            assert math.isclose(hausdorff(pred, gt, 1, 100.0), float(distances.max()),
                                rel_tol=1e-9)
            assert math.isclose(hausdorff(pred, gt, 1, 95.0),
                                float(np.percentile(distances, 95.0)), rel_tol=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.integers(0, 2, size=(12, 12))
        b = rng.integers(0, 2, size=(12, 12))
        assert hausdorff(a, b, 1) == hausdorff(b, a, 1)


class TestRecords:
    def test_one_record_per_class(self):
        labels = np.random.default_rng(6).integers(0, 3, size=(10, 10))
        records = metric_records(labels, labels, range(3), case="case_000")
        assert len(records) == 3
        assert all(r["dsc"] == 1.0 and r["hd"] == 0.0 for r in records)
        assert records[0]["case"] == "case_000"
