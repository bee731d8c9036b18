import numpy as np
import pytest

from shinelab.numerics import BinaryMask, binarize, dilate, iou, max_connected_component

from oracles import dilate_brute, iou_brute, largest_component_brute


def random_mask(rng, max_side=16, density=None):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    p = float(rng.uniform(0.1, 0.7)) if density is None else density
    return BinaryMask((rng.random((h, w)) < p).astype(np.uint8))


class TestBinarize:
    def test_threshold(self):
        m = binarize(np.array([[0.1, 0.3]]), 0.2)
        np.testing.assert_array_equal(m.cells, [[0, 1]])

    def test_gamma_zero_all_ones(self, rng):
        m = binarize(rng.random((4, 5)), 0.0)
        assert m.count() == 20

    def test_boundary_inclusive(self):
        m = binarize(np.array([[0.2]]), 0.2)
        assert m.cells[0, 0] == 1

    def test_out_of_range_values_clamped(self):
        m = binarize(np.array([[-3.0, 5.0]]), 0.5)
        np.testing.assert_array_equal(m.cells, [[0, 1]])

    def test_gamma_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2)), 1.5)


class TestDilate:
    def test_single_pixel_becomes_block(self):
        cells = np.zeros((5, 5), dtype=np.uint8)
        cells[2, 2] = 1
        out = dilate(BinaryMask(cells), 3)
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[1:4, 1:4] = 1
        np.testing.assert_array_equal(out.cells, expected)

    def test_kernel_one_is_identity(self, rng):
        m = random_mask(rng)
        np.testing.assert_array_equal(dilate(m, 1).cells, m.cells)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            dilate(BinaryMask(np.zeros((3, 3), dtype=np.uint8)), 2)

    def test_superset_of_input(self, rng):
        for _ in range(20):
            m = random_mask(rng)
            out = dilate(m, 3)
            assert np.all(out.cells >= m.cells)

    def test_repeated_dilation_grows(self, rng):
        m = random_mask(rng, density=0.2)
        once = dilate(m, 3)
        twice = dilate(once, 3)
        assert np.all(twice.cells >= once.cells)

    def test_matches_brute_force(self, rng):
        for _ in range(50):
            m = random_mask(rng)
            for k in (1, 3, 5):
                np.testing.assert_array_equal(dilate(m, k).cells, dilate_brute(m.cells, k))


class TestMaxConnectedComponent:
    def test_keeps_larger_blob(self):
        cells = np.array(
            [
                [1, 1, 0, 0, 0],
                [1, 1, 0, 1, 1],
                [1, 0, 0, 0, 1],
            ],
            dtype=np.uint8,
        )
        out = max_connected_component(BinaryMask(cells), 4)
        expected = cells.copy()
        expected[1:, 3:] = 0
        np.testing.assert_array_equal(out.cells, expected)

    def test_empty_stays_empty(self):
        m = BinaryMask(np.zeros((4, 4), dtype=np.uint8))
        assert max_connected_component(m, 4).count() == 0

    def test_single_blob_unchanged(self):
        cells = np.zeros((4, 4), dtype=np.uint8)
        cells[1:3, 1:3] = 1
        out = max_connected_component(BinaryMask(cells), 8)
        np.testing.assert_array_equal(out.cells, cells)

    def test_tie_goes_to_scan_order(self):
        cells = np.array(
            [
                [0, 0, 0, 1],
                [1, 0, 0, 1],
                [1, 0, 0, 0],
            ],
            dtype=np.uint8,
        )
        # both components have two cells; the one whose first cell comes
        # first in raster order (top right, at (0, 3)) wins
        out = max_connected_component(BinaryMask(cells), 4)
        expected = np.zeros_like(cells)
        expected[0, 3] = expected[1, 3] = 1
        np.testing.assert_array_equal(out.cells, expected)

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill(self, rng, connectivity):
        for _ in range(100):
            m = random_mask(rng)
            np.testing.assert_array_equal(
                max_connected_component(m, connectivity).cells,
                largest_component_brute(m.cells, connectivity),
            )

    def test_bad_connectivity_rejected(self):
        with pytest.raises(ValueError):
            max_connected_component(BinaryMask(np.ones((2, 2), dtype=np.uint8)), 6)


class TestIou:
    def test_identical_nonempty(self):
        m = BinaryMask(np.eye(3, dtype=np.uint8))
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = BinaryMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
        b = BinaryMask(np.array([[0, 0], [0, 1]], dtype=np.uint8))
        assert iou(a, b) == 0.0

    def test_shifted_block_counts(self):
        a = np.zeros((2, 3), dtype=np.uint8)
        a[:, :2] = 1
        b = np.zeros((2, 3), dtype=np.uint8)
        b[:, 1:] = 1
        assert iou(BinaryMask(a), BinaryMask(b)) == 2 / 6

    def test_both_empty_is_one(self):
        m = BinaryMask(np.zeros((3, 3), dtype=np.uint8))
        assert iou(m, m) == 1.0

    def test_symmetry_and_bounds(self, rng):
        for _ in range(30):
            a = random_mask(rng, max_side=8)
            b = BinaryMask((rng.random(a.shape) < 0.4).astype(np.uint8))
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0

    def test_matches_enumeration(self, rng):
        for _ in range(50):
            a = random_mask(rng, max_side=8)
            b = BinaryMask((rng.random(a.shape) < 0.5).astype(np.uint8))
            assert iou(a, b) == iou_brute(a.cells, b.cells)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            iou(
                BinaryMask(np.zeros((2, 2), dtype=np.uint8)),
                BinaryMask(np.zeros((2, 3), dtype=np.uint8)),
            )


def test_binary_mask_rejects_fractional_cells():
    with pytest.raises(ValueError):
        BinaryMask(np.array([[0.5]]))
