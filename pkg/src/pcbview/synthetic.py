"""Synthetic PCB-like fixtures.

A board is a green substrate with copper traces and pads; defects are small
marks whose look loosely follows the six defect classes. Nothing here tries
to be realistic. It only has to give the augmentation and evaluation code
images with small labeled objects.
"""

from __future__ import annotations

import numpy as np

from .augment import LabeledImage
from .dataset import PKU_CLASSES
from .geometry import BBox
from .metrics import Detection, GroundTruth
from .rng import keyed_rng

SUBSTRATE = (24, 92, 48)
COPPER = (196, 150, 70)


def _rect(img, x0, y0, x1, y1, color):
    img[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = color


def _disc(img, cx, cy, r, color):
    h, w = img.shape[:2]
    yy, xx = np.ogrid[:h, :w]
    img[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = color


def make_board(item_id: str, width: int = 200, height: int = 160, n_defects: int = 3, seed: int = 0, group=None) -> LabeledImage:
    rng = keyed_rng(seed, item_id, "board")
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = SUBSTRATE
    img += rng.integers(0, 6, img.shape, dtype=np.uint8)
    for _ in range(rng.integers(4, 8)):
        if rng.uniform() < 0.5:
            y = int(rng.integers(0, height))
            _rect(img, 0, y, width, y + int(rng.integers(2, 5)), COPPER)
        else:
            x = int(rng.integers(0, width))
            _rect(img, x, 0, x + int(rng.integers(2, 5)), height, COPPER)
    for _ in range(rng.integers(3, 7)):
        _disc(img, int(rng.integers(0, width)), int(rng.integers(0, height)), int(rng.integers(3, 7)), COPPER)

    labels = []
    fixed_class = PKU_CLASSES.index(group) if group in PKU_CLASSES else None
    for _ in range(n_defects):
        cls = fixed_class if fixed_class is not None else int(rng.integers(0, len(PKU_CLASSES)))
        bw = int(rng.integers(8, 20))
        bh = int(rng.integers(8, 20))
        x0 = int(rng.integers(2, width - bw - 2))
        y0 = int(rng.integers(2, height - bh - 2))
        shade = (20 + 30 * cls, 20, 200 - 25 * cls)
        _rect(img, x0, y0, x0 + bw, y0 + bh, shade)
        _disc(img, x0 + bw // 2, y0 + bh // 2, min(bw, bh) // 4, COPPER)
        labels.append((cls, BBox((x0 + bw / 2) / width, (y0 + bh / 2) / height, bw / width, bh / height)))
    prov = {"group": group} if group is not None else {}
    return LabeledImage(img, labels, item_id, prov)


def make_boards(n: int, seed: int = 0, width: int = 200, height: int = 160, prefix: str = "board") -> list[LabeledImage]:
    return [make_board(f"{prefix}{i:03d}", width, height, seed=seed) for i in range(n)]


def noisy_detections(
    gts: list[GroundTruth], seed: int, center_jitter: float = 0.08, size_jitter: float = 0.08, miss_rate: float = 0.03
) -> list[Detection]:
    """A stand-in detector: ground truth with relative box noise and random confidences.

    Noise is drawn per ``(image_id, index within image)`` so that the same
    object gets the same perturbation regardless of the list it sits in.
    """
    dets = []
    counters: dict[str, int] = {}
    for g in gts:
        k = counters.get(g.image_id, 0)
        counters[g.image_id] = k + 1
        rng = keyed_rng(seed, f"{g.image_id}#{k}", "detector")
        dx, dy = rng.normal(0.0, center_jitter, 2)
        sw, sh = np.exp(rng.normal(0.0, size_jitter, 2))
        conf = float(rng.uniform(0.3, 1.0))
        if rng.uniform() < miss_rate:
            continue
        b = g.box
        box = BBox(b.cx + dx * b.w, b.cy + dy * b.h, b.w * sw, b.h * sh)
        dets.append(Detection(g.image_id, g.class_id, box, conf))
    return dets
