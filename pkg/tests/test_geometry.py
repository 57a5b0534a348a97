"""
Tests for box arithmetic.
"""

import unittest

import numpy as np

from textrl.geometry import Box, closest_box, iou, tiou, upscale_box


def _cell_counts(a: Box, b: Box, size: int = 64) -> tuple[int, int, int]:
    """Areas of a, b and a∩b by counting unit cells on the grid."""
    grid_a = np.zeros((size, size), dtype=bool)
    grid_b = np.zeros((size, size), dtype=bool)
    grid_a[int(a.y_min):int(a.y_max), int(a.x_min):int(a.x_max)] = True
    grid_b[int(b.y_min):int(b.y_max), int(b.x_min):int(b.x_max)] = True
    return int(grid_a.sum()), int(grid_b.sum()), int((grid_a & grid_b).sum())


def _random_box(rng: np.random.Generator) -> Box:
    x0, x1 = sorted(rng.choice(65, size=2, replace=False))
    y0, y1 = sorted(rng.choice(65, size=2, replace=False))
    return Box(float(x0), float(y0), float(x1), float(y1))


class TestBox(unittest.TestCase):
    def test_degenerate_rejected(self):
        with self.assertRaises(ValueError):
            Box(0, 0, 0, 10)
        with self.assertRaises(ValueError):
            Box(5, 0, 1, 10)
        with self.assertRaises(ValueError):
            Box(0, 0, float("nan"), 10)

    def test_outside_canvas_allowed(self):
        b = Box(-20, -5, -1, 3)
        self.assertEqual(b.width, 19)
        self.assertEqual(b.area, 19 * 8)

    def test_list_conversion(self):
        b = Box.from_list([1, 2, 3, 4])
        self.assertEqual(b.to_list(), [1.0, 2.0, 3.0, 4.0])


class TestIoU(unittest.TestCase):
    def test_identity(self):
        a = Box(0, 0, 10, 10)
        self.assertEqual(iou(a, a), 1.0)

    def test_half_overlap(self):
        self.assertAlmostEqual(iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)), 1 / 3, places=12)

    def test_disjoint(self):
        self.assertEqual(iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)), 0.0)

    def test_touching_edges_is_zero(self):
        self.assertEqual(iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)), 0.0)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, b = _random_box(rng), _random_box(rng)
            self.assertEqual(iou(a, b), iou(b, a))


class TestTIoU(unittest.TestCase):
    def test_identity(self):
        g = Box(0, 0, 10, 10)
        self.assertEqual(tiou(g, g), 1.0)

    def test_half_covered(self):
        self.assertAlmostEqual(tiou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)), 1 / 6, places=12)

    def test_ground_truth_inside_detection(self):
        d, g = Box(0, 0, 20, 20), Box(5, 5, 10, 10)
        self.assertAlmostEqual(tiou(d, g), 0.0625, places=12)
        self.assertEqual(tiou(d, g), iou(d, g))

    def test_not_symmetric(self):
        d, g = Box(0, 0, 20, 20), Box(5, 5, 10, 10)
        self.assertNotAlmostEqual(tiou(d, g), tiou(g, d))

    def test_bounded_by_iou(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            d, g = _random_box(rng), _random_box(rng)
            self.assertGreaterEqual(tiou(d, g), 0.0)
            self.assertLessEqual(tiou(d, g), iou(d, g) + 1e-15)


class TestGridOracle(unittest.TestCase):
    def test_matches_cell_counting(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            a, b = _random_box(rng), _random_box(rng)
            area_a, area_b, inter = _cell_counts(a, b)
            expected_iou = inter / (area_a + area_b - inter)
            expected_tiou = expected_iou * inter / area_b
            self.assertAlmostEqual(iou(a, b), expected_iou, delta=1e-9)
            self.assertAlmostEqual(tiou(a, b), expected_tiou, delta=1e-9)


class TestUpscale(unittest.TestCase):
    def assertBoxAlmostEqual(self, got: Box, expected: tuple, places: int = 9):
        for g, e in zip(got.to_list(), expected):
            self.assertAlmostEqual(g, e, places=places)

    def test_examples(self):
        self.assertBoxAlmostEqual(upscale_box(Box(10, 10, 30, 20), 1.1), (9, 9.5, 31, 20.5))
        self.assertBoxAlmostEqual(upscale_box(Box(0, 0, 10, 10), 1.0), (0, 0, 10, 10))
        self.assertBoxAlmostEqual(upscale_box(Box(-5, 0, 5, 10), 2.0), (-10, -5, 10, 15))

    def test_center_and_area(self):
        g = Box(3, 7, 19, 12)
        up = upscale_box(g, 1.3)
        self.assertAlmostEqual(up.center[0], g.center[0])
        self.assertAlmostEqual(up.center[1], g.center[1])
        self.assertAlmostEqual(up.area, g.area * 1.3 ** 2)

    def test_factor_below_one(self):
        with self.assertRaises(ValueError):
            upscale_box(Box(0, 0, 10, 10), 0.9)


class TestClosestBox(unittest.TestCase):
    def test_max_iou_wins(self):
        det = Box(0, 0, 10, 10)
        self.assertEqual(closest_box(det, [Box(20, 20, 30, 30), Box(2, 0, 12, 10)]), 1)

    def test_tie_goes_to_nearer_center(self):
        det = Box(0, 0, 10, 10)
        far, near = Box(40, 40, 50, 50), Box(15, 0, 25, 10)
        self.assertEqual(closest_box(det, [far, near]), 1)

    def test_empty(self):
        with self.assertRaises(ValueError):
            closest_box(Box(0, 0, 1, 1), [])


if __name__ == "__main__":
    unittest.main()
