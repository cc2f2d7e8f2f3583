"""Affine math on normalized image coordinates and axis-aligned boxes.

Coordinates are normalized so the image spans the unit square. Matrices act
on column vectors ``(x, y, 1)``. Transforms used for augmentation pivot about
the image center ``(0.5, 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

CENTER = (0.5, 0.5)


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center format ``(cx, cy, w, h)``."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """``(x0, y0, x1, y1)`` extent."""
        hw, hh = self.w / 2, self.h / 2
        return self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh

    @property
    def area(self) -> float:
        return self.w * self.h

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


class AffineMatrix:
    """3x3 homogeneous 2-D affine transform.

    The layout follows the usual parameterization::

        [[S_x,  Sh_x, T_x],
         [Sh_y, S_y,  T_y],
         [0,    0,    1  ]]

    Instances are immutable; the backing array is read-only.
    """

    __slots__ = ("_m",)

    def __init__(self, m):
        a = np.array(m, dtype=np.float64)
        if a.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        if a[2, 0] != 0 or a[2, 1] != 0 or a[2, 2] != 1:
            raise ValueError("bottom row must be exactly (0, 0, 1)")
        if a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] == 0:
            raise ValueError("matrix is not invertible")
        a.setflags(write=False)
        self._m = a

    @classmethod
    def identity(cls) -> "AffineMatrix":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineMatrix":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])

    @property
    def array(self) -> np.ndarray:
        return self._m

    s_x = property(lambda self: float(self._m[0, 0]))
    s_y = property(lambda self: float(self._m[1, 1]))
    sh_x = property(lambda self: float(self._m[0, 1]))
    sh_y = property(lambda self: float(self._m[1, 0]))
    t_x = property(lambda self: float(self._m[0, 2]))
    t_y = property(lambda self: float(self._m[1, 2]))

    @property
    def det(self) -> float:
        m = self._m
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def is_identity(self) -> bool:
        return bool(np.array_equal(self._m, np.eye(3)))

    def inverse(self) -> "AffineMatrix":
        m = self._m
        a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
        det = a * d - b * c
        ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
        tx, ty = m[0, 2], m[1, 2]
        return AffineMatrix(
            [[ia, ib, -(ia * tx + ib * ty)], [ic, id_, -(ic * tx + id_ * ty)], [0.0, 0.0, 1.0]]
        )

    def __matmul__(self, other: "AffineMatrix") -> "AffineMatrix":
        return AffineMatrix(self._m @ other._m)

    def apply(self, p) -> Point:
        """Apply to a point without any pivot."""
        m = self._m
        x, y = p
        return Point(m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2])

    def about_center(self) -> "AffineMatrix":
        """The conjugate ``T(c) @ self @ T(-c)`` pivoting at the image center."""
        cx, cy = CENTER
        return AffineMatrix.translation(cx, cy) @ self @ AffineMatrix.translation(-cx, -cy)

    def __eq__(self, other):
        return isinstance(other, AffineMatrix) and np.array_equal(self._m, other._m)

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        rows = ", ".join("[" + ", ".join(f"{v:.6g}" for v in r) + "]" for r in self._m)
        return f"AffineMatrix([{rows}])"


def shear_matrix(sh_x: float, sh_y: float) -> AffineMatrix:
    """Pure shear ``[[1, sh_x], [sh_y, 1]]``.

    Coefficients must satisfy ``|sh| < 1`` so the determinant
    ``1 - sh_x * sh_y`` stays positive.
    """
    if not (math.isfinite(sh_x) and math.isfinite(sh_y)):
        raise ValueError("shear coefficients must be finite")
    if abs(sh_x) >= 1 or abs(sh_y) >= 1 or 1 - sh_x * sh_y <= 0:
        raise ValueError(f"shear ({sh_x}, {sh_y}) outside |sh| < 1")
    return AffineMatrix([[1.0, sh_x, 0.0], [sh_y, 1.0, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(theta: float) -> AffineMatrix:
    """Rotation by ``theta`` radians, counterclockwise with y pointing up."""
    if not math.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    if theta == 0:
        return AffineMatrix.identity()
    c, s = math.cos(theta), math.sin(theta)
    return AffineMatrix([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_about_center(m: AffineMatrix, p) -> Point:
    cx, cy = CENTER
    x, y = p
    q = m.apply((x - cx, y - cy))
    return Point(q.x + cx, q.y + cy)


def transform_bbox(m: AffineMatrix, b: BBox) -> BBox:
    """Axis-aligned envelope of the four corners of ``b`` mapped about the center.

    The result is not clipped to the image.
    """
    if m.is_identity():
        return b
    x0, y0, x1, y1 = b.corners
    pts = [apply_about_center(m, c) for c in ((x0, y0), (x1, y0), (x0, y1), (x1, y1))]
    xs = [p.x for p in pts]
    ys = [p.y for p in pts]
    return BBox.from_corners(min(xs), min(ys), max(xs), max(ys))


def clip_bbox(b: BBox, region: BBox) -> tuple[Optional[BBox], float]:
    """Intersect ``b`` with ``region``.

    Returns the clipped box (``None`` when the overlap is degenerate) and the
    fraction of ``b``'s area that survived.
    """
    bx0, by0, bx1, by1 = b.corners
    rx0, ry0, rx1, ry1 = region.corners
    if bx0 >= rx0 and by0 >= ry0 and bx1 <= rx1 and by1 <= ry1:
        return b, 1.0
    x0, y0 = max(bx0, rx0), max(by0, ry0)
    x1, y1 = min(bx1, rx1), min(by1, ry1)
    if x1 <= x0 or y1 <= y0:
        return None, 0.0
    frac = ((x1 - x0) * (y1 - y0)) / ((bx1 - bx0) * (by1 - by0))
    return BBox.from_corners(x0, y0, x1, y1), min(frac, 1.0)


UNIT_SQUARE = BBox(0.5, 0.5, 1.0, 1.0)


def intersection_area(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    # corner-derived areas so that iou(a, a) is exactly 1
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return min(inter / union, 1.0)
