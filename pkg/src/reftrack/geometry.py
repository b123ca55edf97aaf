"""Axis-aligned box geometry: overlap measures and the clamped
center/side-distance parameterization used by the prediction heads."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box as a corner pair, x1 <= x2 and y1 <= y2, in pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {self}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True)
class CenterSidesBox:
    """Box written as a clamped center plus distances to the four sides.

    The center is the true box center clamped into the image, so it can sit
    off-center; ``dl + dr`` and ``dt + db`` still recover width and height.
    For a box lying entirely outside the image on one axis, an exact
    round-trip forces one distance negative; decode stays exact. Exactness
    holds whenever corner coordinates carry at most ~50 significant bits
    (any physical pixel lattice qualifies); beyond that no six-float
    center/sides encoding can be lossless.
    """

    cx: float
    cy: float
    dl: float
    dt: float
    dr: float
    db: float


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive: {self}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; 0 for disjoint or zero-area union."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in [-1, 1]: IoU minus the hull's empty fraction."""
    hw = max(a.x2, b.x2) - min(a.x1, b.x1)
    hh = max(a.y2, b.y2) - min(a.y1, b.y1)
    hull = hw * hh
    if hull <= 0.0:
        return 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = a.area + b.area - inter
    base = inter / union if union > 0.0 else 0.0
    return base - (hull - union) / hull


def _exact_distance(anchor: float, target: float, sign: float) -> float:
    """Distance d with anchor + sign * d == target, bit-exactly when possible.

    The naive d rounds, so anchor + sign*d can land one ulp off the target;
    nudging d through its floating-point neighbours recovers exactness.
    """
    d = (target - anchor) * sign
    if anchor + sign * d == target:
        return d
    for _ in range(4):
        d_up = math.nextafter(d, math.inf)
        if anchor + sign * d_up == target:
            return d_up
        d_dn = math.nextafter(d, -math.inf)
        if anchor + sign * d_dn == target:
            return d_dn
        d = d_up if abs(anchor + sign * d_up - target) < abs(
            anchor + sign * d_dn - target) else d_dn
    return (target - anchor) * sign


def encode_box(b: BBox, img: ImageSize) -> CenterSidesBox:
    """Encode a box as its image-clamped center plus side distances.

    The clamp range is the continuous span [0, width] x [0, height]. Side
    distances are measured from the clamped center and chosen so that
    :func:`decode_box` reproduces the input box bit-exactly.
    """
    cx, cy = b.center
    cx = min(max(cx, 0.0), float(img.width))
    cy = min(max(cy, 0.0), float(img.height))
    return CenterSidesBox(
        cx=cx,
        cy=cy,
        dl=_exact_distance(cx, b.x1, -1.0),
        dt=_exact_distance(cy, b.y1, -1.0),
        dr=_exact_distance(cx, b.x2, 1.0),
        db=_exact_distance(cy, b.y2, 1.0),
    )


def decode_box(c: CenterSidesBox) -> BBox:
    """Exact inverse of :func:`encode_box`."""
    return BBox(c.cx - c.dl, c.cy - c.dt, c.cx + c.dr, c.cy + c.db)
