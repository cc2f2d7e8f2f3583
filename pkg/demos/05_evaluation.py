"""Scoring a detector on viewpoint-shifted test sets, with stale and with
transformed labels.

The "detector" is a noisy copy of where each defect actually ends up after
the warp, found by warping a pixel mask of the defect rather than by asking
the label code. Its numbers say nothing about any real model. What matters
is the direction: stale labels make the same detector look worse as the
viewpoint moves, while transformed labels keep the score flat.

Run: python3 demos/05_evaluation.py
"""

import numpy as np

from pcbview import CONTRAST_PRESETS, PKU_CLASSES, BBox, GroundTruth, build_contrast_dataset, evaluate, shear_matrix, viewpoint_rotation
from pcbview.raster import warp_image
from pcbview.report import format_table
from pcbview.synthetic import make_boards, noisy_detections


def where_defects_landed(li, source):
    h, w = source.image.shape[:2]
    p = li.provenance
    m = shear_matrix(*p["shear"]) if p["variant"] == "shear" else viewpoint_rotation(p["rotate_deg"])
    found = []
    for c, b in source.labels:
        mask = np.zeros((h, w, 1), np.uint8)
        x0, y0, x1, y1 = b.corners
        mask[round(y0 * h) : round(y1 * h), round(x0 * w) : round(x1 * w)] = 255
        ys, xs = np.nonzero(warp_image(mask, m)[:, :, 0] >= 128)
        if len(xs):
            found.append(GroundTruth(li.source_id, c, BBox.from_corners(xs.min() / w, ys.min() / h, (xs.max() + 1) / w, (ys.max() + 1) / h)))
    return found


boards = make_boards(60, seed=11)
originals = {b.source_id: b for b in boards}

print(f"{'':<20} {'stale labels':>21} {'moved labels':>21}")
print(f"{'preset':<20} {'mAP50':>10} {'mAP50-95':>10} {'mAP50':>10} {'mAP50-95':>10}")
for name, (shear, rotate) in CONTRAST_PRESETS.items():
    shifted = build_contrast_dataset(boards, shear, rotate, seed=0)
    truth = [g for li in shifted for g in where_defects_landed(li, originals[li.provenance["source"]])]
    dets = noisy_detections(truth, seed=5)
    moved = [GroundTruth(li.source_id, c, b) for li in shifted for c, b in li.labels]
    stale = [GroundTruth(li.source_id, c, b) for li in shifted for c, b in originals[li.provenance["source"]].labels]
    a, b = evaluate(dets, stale, PKU_CLASSES), evaluate(dets, moved, PKU_CLASSES)
    print(f"{name:<20} {a.map50:10.4f} {a.map50_95:10.4f} {b.map50:10.4f} {b.map50_95:10.4f}")

print()
print(format_table(evaluate(dets, moved, PKU_CLASSES), method="noisy detector"))
