"""Boxes, affine maps and what happens to a label when the camera tilts.

Run: python3 demos/01_geometry.py
"""

import math

import numpy as np

from pcbview import BBox, clip_bbox, iou, shear_matrix, transform_bbox, viewpoint_rotation

# Boxes are normalized (cx, cy, w, h). The unit square is the whole image.
box = BBox(0.5, 0.5, 0.2, 0.2)
print("box:", box.astuple(), "corners:", box.corners)

# Matrices act about the image center, so a centered box stays centered.
rot = viewpoint_rotation(10)
print("\n10 degree rotation (3x3, applied about (0.5, 0.5)):")
print(np.round(rot.array, 4))

# The label of a rotated box is the upright envelope of its rotated corners.
out = transform_bbox(rot, box)
print("\nrotated label:", tuple(round(float(v), 4) for v in out.astuple()))
side = 0.2 * (math.cos(math.radians(10)) + math.sin(math.radians(10)))
print(f"closed form for the side: 0.2 * (cos 10 + sin 10) = {side:.6f}")

# Shear grows the box along one axis only.
sheared = transform_bbox(shear_matrix(0.06, 0.0), box)
print("sheared (0.06, 0):", tuple(round(float(v), 4) for v in sheared.astuple()))

# Labels near the border are clipped; the retained area fraction drives the keep/drop rule.
edge = BBox(1.0, 0.5, 0.2, 0.2)
clipped, frac = clip_bbox(edge, BBox(0.5, 0.5, 1.0, 1.0))
print("\nedge box clipped:", tuple(round(v, 6) for v in clipped.astuple()), "retained fraction:", round(frac, 6))

# How much does a stale label still overlap the moved object?
for deg in (0, 5, 10):
    moved = transform_bbox(viewpoint_rotation(deg), BBox(0.8, 0.3, 0.05, 0.05))
    print(f"rotate {deg:>2} deg: IoU(stale label, true label) = {iou(BBox(0.8, 0.3, 0.05, 0.05), moved):.3f}")
