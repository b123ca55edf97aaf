import math

import numpy as np
import pytest

from reftrack.geometry import BBox, CenterSidesBox, ImageSize, decode_box, encode_box, giou, iou


class TestIoU:
    def test_identity(self):
        a = BBox(1, 2, 5, 7)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0

    def test_partial_overlap(self):
        # inter = 1, union = 4 + 4 - 1 = 7
        got = iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3))
        assert got == pytest.approx(1.0 / 7.0, abs=1e-12)

    def test_degenerate_union(self):
        p = BBox(3, 3, 3, 3)
        assert iou(p, p) == 0.0

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            x1, y1 = rng.uniform(0, 50, 2)
            a = BBox(x1, y1, x1 + rng.uniform(0, 30), y1 + rng.uniform(0, 30))
            x1, y1 = rng.uniform(0, 50, 2)
            b = BBox(x1, y1, x1 + rng.uniform(0, 30), y1 + rng.uniform(0, 30))
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0


class TestGIoU:
    def test_identity(self):
        a = BBox(0, 0, 4, 4)
        assert giou(a, a) == 1.0

    def test_side_by_side(self):
        # IoU 0, hull (0,0,3,1) area 3, union 2: 0 - 1/3
        got = giou(BBox(0, 0, 1, 1), BBox(2, 0, 3, 1))
        assert got == pytest.approx(-1.0 / 3.0, abs=1e-12)

    def test_limit_far_apart(self):
        got = giou(BBox(0, 0, 1, 1), BBox(1e6, 0, 1e6 + 1, 1))
        assert got == pytest.approx(-1.0, abs=1e-4)

    def test_never_exceeds_iou(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            x1, y1 = rng.uniform(0, 50, 2)
            a = BBox(x1, y1, x1 + rng.uniform(0.1, 30), y1 + rng.uniform(0.1, 30))
            x1, y1 = rng.uniform(0, 50, 2)
            b = BBox(x1, y1, x1 + rng.uniform(0.1, 30), y1 + rng.uniform(0.1, 30))
            assert giou(a, b) <= iou(a, b) + 1e-12

    def test_equals_iou_when_hull_is_union(self):
        outer = BBox(0, 0, 10, 10)
        inner = BBox(2, 2, 5, 5)
        assert giou(outer, inner) == pytest.approx(iou(outer, inner), abs=1e-12)


class TestEncodeDecode:
    IMG = ImageSize(10, 10)

    def test_center_inside(self):
        enc = encode_box(BBox(2, 2, 4, 4), self.IMG)
        assert enc == CenterSidesBox(3, 3, 1, 1, 1, 1)

    def test_center_clamped(self):
        enc = encode_box(BBox(-4, 0, 2, 2), self.IMG)
        assert enc == CenterSidesBox(0, 1, 4, 1, 2, 1)
        assert decode_box(enc) == BBox(-4, 0, 2, 2)

    def test_zero_width(self):
        enc = encode_box(BBox(1, 1, 1, 3), self.IMG)
        assert enc == CenterSidesBox(1, 2, 0, 1, 0, 1)

    def test_decode_point_box(self):
        assert decode_box(CenterSidesBox(4, 5, 0, 0, 0, 0)) == BBox(4, 5, 4, 5)

    def test_decode_examples(self):
        assert decode_box(CenterSidesBox(3, 3, 1, 1, 1, 1)) == BBox(2, 2, 4, 4)
        assert decode_box(CenterSidesBox(0, 1, 4, 1, 2, 1)) == BBox(-4, 0, 2, 2)

    def test_side_sums_recover_extent(self):
        enc = encode_box(BBox(-4, 0, 2, 2), self.IMG)
        assert enc.dl + enc.dr == 6.0
        assert enc.dt + enc.db == 2.0

    def test_round_trip_random(self):
        # Coordinates on a sub-micropixel lattice: any physical box data.
        rng = np.random.default_rng(7)
        quantum = 2.0 ** -20
        for _ in range(10_000):
            img = ImageSize(int(rng.integers(1, 200)), int(rng.integers(1, 200)))
            x1 = round(rng.uniform(-50, img.width + 50) / quantum) * quantum
            y1 = round(rng.uniform(-50, img.height + 50) / quantum) * quantum
            w = round(rng.uniform(0, 60) / quantum) * quantum
            h = round(rng.uniform(0, 60) / quantum) * quantum
            b = BBox(x1, y1, x1 + w, y1 + h)
            back = decode_box(encode_box(b, img))
            assert back.x1 == b.x1 and back.y1 == b.y1
            assert back.x2 == b.x2 and back.y2 == b.y2

    def test_round_trip_full_precision_within_ulp(self):
        # Arbitrary 53-bit coordinates still round-trip to within one ulp.
        rng = np.random.default_rng(8)
        for _ in range(2_000):
            img = ImageSize(int(rng.integers(1, 200)), int(rng.integers(1, 200)))
            x1 = rng.uniform(-50, img.width + 50)
            y1 = rng.uniform(-50, img.height + 50)
            b = BBox(x1, y1, x1 + rng.uniform(0, 60), y1 + rng.uniform(0, 60))
            back = decode_box(encode_box(b, img))
            for got, want in ((back.x1, b.x1), (back.y1, b.y1),
                              (back.x2, b.x2), (back.y2, b.y2)):
                assert abs(got - want) <= 2 * math.ulp(max(abs(want), 1.0))


class TestValidation:
    def test_inverted_box_raises(self):
        with pytest.raises(ValueError):
            BBox(3, 0, 1, 1)

    def test_non_finite_raises(self):
        with pytest.raises(ValueError):
            BBox(0, 0, math.inf, 1)

    def test_bad_image_size(self):
        with pytest.raises(ValueError):
            ImageSize(0, 5)
