"""Diversified scene enhancement: viewpoint warps, 2x2 tiling, blur and resize.

The geometry module works in the usual math orientation (y up). Raster rows
grow downward, so a counterclockwise rotation of ``deg`` degrees as seen on
screen is ``rotation_matrix(-radians(deg))`` in normalized pixel coordinates.
:func:`viewpoint_rotation` is that adapter; everything here uses it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import raster
from .geometry import UNIT_SQUARE, AffineMatrix, BBox, clip_bbox, rotation_matrix, shear_matrix, transform_bbox
from .rng import keyed_rng, stream_key

Label = tuple[int, BBox]

CONTRAST_PRESETS: dict[str, tuple[float, float]] = {
    "shear000-rotate00": (0.0, 0.0),
    "shear003-rotate05": (0.03, 5.0),
    "shear006-rotate05": (0.06, 5.0),
    "shear006-rotate10": (0.06, 10.0),
}

SAMPLING_MODES = ("uniform", "endpoints")


@dataclass(frozen=True)
class AugmentSpec:
    """Parameters of the training-set expansion.

    ``shear_limit`` is a unitless coefficient bound, ``rotate_limit`` is in
    degrees, ``blur_radius_range`` is an inclusive pixel range and
    ``output_size`` the side of the square output in pixels.
    """

    shear_limit: float = 0.06
    rotate_limit: float = 10.0
    blur_radius_range: tuple[int, int] = (1, 5)
    output_size: int = 640
    seed: int = 0
    retention_threshold: float = 0.25
    min_side_px: float = 2.0
    sampling: str = "uniform"
    fill: int = 0

    def __post_init__(self):
        if not 0 <= self.shear_limit < 1:
            raise ValueError(f"shear_limit must be in [0, 1), got {self.shear_limit}")
        if not 0 <= self.rotate_limit < 90:
            raise ValueError(f"rotate_limit must be in [0, 90) degrees, got {self.rotate_limit}")
        lo, hi = self.blur_radius_range
        if int(lo) != lo or int(hi) != hi or lo < 0 or hi < lo:
            raise ValueError(f"blur_radius_range must be a nonempty integer range with min >= 0, got {self.blur_radius_range}")
        if self.output_size < 32:
            raise ValueError(f"output_size must be >= 32, got {self.output_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not 0 <= self.retention_threshold <= 1:
            raise ValueError("retention_threshold must be a fraction in [0, 1]")
        if self.min_side_px < 0:
            raise ValueError("min_side_px must be >= 0")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if not 0 <= self.fill <= 255:
            raise ValueError("fill must be a gray level in [0, 255]")


@dataclass
class LabeledImage:
    image: np.ndarray
    labels: list[Label]
    source_id: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.image = raster.as_image(self.image)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def viewpoint_rotation(degrees: float) -> AffineMatrix:
    """Rotation that appears counterclockwise on a y-down raster."""
    return rotation_matrix(-math.radians(degrees))


def _keep(clipped: Optional[BBox], frac: float, retention: float, min_side_px: float, w_px: float, h_px: float) -> bool:
    if clipped is None or frac < retention:
        return False
    if frac < 1.0 and (clipped.w * w_px < min_side_px or clipped.h * h_px < min_side_px):
        return False
    return True


def _describe(m: AffineMatrix) -> str:
    a = m.array
    return "affine" + "".join(f"{v:+.4f}" for v in (a[0, 0], a[0, 1], a[1, 0], a[1, 1]))


def warp_labeled(
    li: LabeledImage,
    m: AffineMatrix,
    retention: float = 0.25,
    *,
    min_side_px: float = 2.0,
    fill: int = 0,
    tag: Optional[str] = None,
) -> LabeledImage:
    """Warp the image and move its labels with it.

    Labels become the axis-aligned envelope of their transformed corners,
    clipped to the image. A label is dropped when less than ``retention`` of
    its area survives the clip, or when clipping leaves a side shorter than
    ``min_side_px`` pixels.
    """
    img = raster.warp_image(li.image, m, fill=fill)
    h, w = img.shape[:2]
    labels = []
    for cls, box in li.labels:
        clipped, frac = clip_bbox(transform_bbox(m, box), UNIT_SQUARE)
        if _keep(clipped, frac, retention, min_side_px, w, h):
            labels.append((cls, clipped))
    sid = f"{li.source_id}_{tag or _describe(m)}"
    return LabeledImage(img, labels, sid, dict(li.provenance))


def _local_box(box: BBox, x0: float, y0: float, x1: float, y1: float) -> Optional[BBox]:
    bx0, by0, bx1, by1 = box.corners
    sx, sy = x1 - x0, y1 - y0
    lx0 = min(max((bx0 - x0) / sx, 0.0), 1.0)
    lx1 = min(max((bx1 - x0) / sx, 0.0), 1.0)
    ly0 = min(max((by0 - y0) / sy, 0.0), 1.0)
    ly1 = min(max((by1 - y0) / sy, 0.0), 1.0)
    if lx1 <= lx0 or ly1 <= ly0:
        return None
    return BBox.from_corners(lx0, ly0, lx1, ly1)


def tile_2x2(li: LabeledImage, retention: float = 0.25, *, min_side_px: float = 2.0) -> list[LabeledImage]:
    """Split into quadrants: top-left, top-right, bottom-left, bottom-right.

    Labels are clipped to each quadrant and rescaled to tile-local normalized
    coordinates. A label straddling a split line can land in several tiles.
    """
    h, w = li.height, li.width
    if h < 2 or w < 2:
        raise ValueError("tiling needs an image of at least 2x2 pixels")
    ch, cw = h // 2, w // 2
    tiles = []
    for k, (r0, r1, c0, c1) in enumerate(((0, ch, 0, cw), (0, ch, cw, w), (ch, h, 0, cw), (ch, h, cw, w))):
        x0, x1, y0, y1 = c0 / w, c1 / w, r0 / h, r1 / h
        region = BBox.from_corners(x0, y0, x1, y1)
        labels = []
        for cls, box in li.labels:
            clipped, frac = clip_bbox(box, region)
            if not _keep(clipped, frac, retention, min_side_px, w, h):
                continue
            local = _local_box(clipped, x0, y0, x1, y1)
            if local is not None:
                labels.append((cls, local))
        prov = dict(li.provenance, tile=k)
        tiles.append(LabeledImage(li.image[r0:r1, c0:c1].copy(), labels, f"{li.source_id}_t{k}", prov))
    return tiles


def draw_magnitude(rng: np.random.Generator, bound: float, sampling: str = "uniform") -> float:
    """One signed parameter in ``[-bound, bound]``.

    A single uniform variate is consumed in either mode, so streams stay
    aligned when only the bound changes.
    """
    u = rng.uniform(-1.0, 1.0)
    if sampling == "uniform":
        return u * bound
    if sampling == "endpoints":
        return math.copysign(bound, u)
    raise ValueError(f"unknown sampling mode {sampling!r}")


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _finish_tile(tile: LabeledImage, spec: AugmentSpec, key_id: str) -> LabeledImage:
    stage = "blur"
    rng = keyed_rng(spec.seed, key_id, stage)
    lo, hi = spec.blur_radius_range
    radius = int(rng.integers(lo, hi + 1))
    img = raster.resize(raster.gaussian_blur(tile.image, radius), spec.output_size)
    prov = dict(tile.provenance, blur_radius=radius)
    prov["rng_keys"] = dict(tile.provenance.get("rng_keys", {}), blur=f"{stream_key(spec.seed, key_id, stage):032x}")
    return LabeledImage(img, tile.labels, tile.source_id, prov)


def _expand_one(li: LabeledImage, spec: AugmentSpec) -> list[LabeledImage]:
    sid = li.source_id
    rng = keyed_rng(spec.seed, sid, "shear")
    shx = draw_magnitude(rng, spec.shear_limit, spec.sampling)
    shy = draw_magnitude(rng, spec.shear_limit, spec.sampling)
    rng = keyed_rng(spec.seed, sid, "rotate")
    deg = draw_magnitude(rng, spec.rotate_limit, spec.sampling)

    base = dict(li.provenance, source=sid)
    keys = {
        "shear": f"{stream_key(spec.seed, sid, 'shear'):032x}",
        "rotate": f"{stream_key(spec.seed, sid, 'rotate'):032x}",
    }
    warp = dict(retention=spec.retention_threshold, min_side_px=spec.min_side_px, fill=spec.fill)
    variants = [
        LabeledImage(li.image, list(li.labels), f"{sid}_orig", dict(base, variant="original")),
        warp_labeled(
            replace(li, provenance=dict(base, variant="shear", shear=[shx, shy], rng_keys={"shear": keys["shear"]})),
            shear_matrix(shx, shy),
            tag="shear",
            **warp,
        ),
        warp_labeled(
            replace(li, provenance=dict(base, variant="rotate", rotate_deg=deg, rng_keys={"rotate": keys["rotate"]})),
            viewpoint_rotation(deg),
            tag="rot",
            **warp,
        ),
    ]
    out = []
    for v in variants:
        for tile in tile_2x2(v, spec.retention_threshold, min_side_px=spec.min_side_px):
            out.append(_finish_tile(tile, spec, tile.source_id))
    return out


def build_shear_rotate_dataset(
    dataset: Sequence[LabeledImage], spec: AugmentSpec, workers: int = 1
) -> list[LabeledImage]:
    """Training-set expansion: original + sheared + rotated copies, each tiled,
    blurred with a random radius per tile and resized.

    Emits ``12 * len(dataset)`` items in input order. Output depends only on
    the inputs and ``spec``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    chunks = _map(lambda li: _expand_one(li, spec), list(dataset), workers)
    return [t for chunk in chunks for t in chunk]


def _contrast_one(
    li: LabeledImage, shear: float, rotate: float, seed: int, sampling: str, retention: float, min_side_px: float, fill: int
) -> LabeledImage:
    sid = li.source_id
    stage = "contrast"
    rng = keyed_rng(seed, sid, stage)
    use_shear = bool(rng.uniform() < 0.5)
    a = draw_magnitude(rng, 1.0, sampling)
    b = draw_magnitude(rng, 1.0, sampling)
    prov = dict(li.provenance, source=sid, rng_keys={stage: f"{stream_key(seed, sid, stage):032x}"})
    if use_shear:
        params = (a * shear, b * shear)
        m = shear_matrix(*params)
        prov.update(variant="shear", shear=list(params))
        tag = "shear"
    else:
        deg = a * rotate
        m = viewpoint_rotation(deg)
        prov.update(variant="rotate", rotate_deg=deg)
        tag = "rot"
    src = replace(li, provenance=prov)
    return warp_labeled(src, m, retention, min_side_px=min_side_px, fill=fill, tag=tag)


def build_contrast_dataset(
    testset: Sequence[LabeledImage],
    shear: float,
    rotate: float,
    seed: int,
    *,
    sampling: str = "uniform",
    retention: float = 0.25,
    min_side_px: float = 2.0,
    fill: int = 0,
    workers: int = 1,
) -> list[LabeledImage]:
    """Viewpoint-shifted test set: each image is replaced by one sheared or
    one rotated copy.

    The shear-or-rotate choice and the unit draws depend only on ``seed`` and
    the item id, so two calls that differ only in the bounds transform each
    image the same way, scaled.
    """
    if not testset:
        raise ValueError("test set is empty")
    if not 0 <= shear < 1:
        raise ValueError("shear bound must be in [0, 1)")
    if not 0 <= rotate < 90:
        raise ValueError("rotation bound must be in [0, 90) degrees")
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
    fn = lambda li: _contrast_one(li, shear, rotate, seed, sampling, retention, min_side_px, fill)  # noqa: E731
    return _map(fn, list(testset), workers)


def contrast_preset(name: str) -> tuple[float, float]:
    try:
        return CONTRAST_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(CONTRAST_PRESETS)}") from None

