"""Box regression losses: IoU, CIoU and SIoU, their parts and their gradients.

Run: python3 demos/03_losses.py
"""

import numpy as np

from pcbview import BBox, SIoUParams, ciou_loss, loss_gradient_check, siou_loss
from pcbview.losses import angle_cost, iou_loss

gt = BBox(0.5, 0.5, 0.2, 0.2)

print("prediction moving along a 45 degree diagonal toward the target")
print(f"{'offset':>7} {'1-IoU':>7} {'CIoU':>7} {'SIoU':>7} {'Lambda':>7}")
for d in (0.2, 0.1, 0.05, 0.02, 0.0):
    pred = BBox(0.5 + d, 0.5 + d, 0.2, 0.2)
    s = siou_loss(pred, gt)
    print(f"{d:7.2f} {iou_loss(pred, gt).total:7.4f} {ciou_loss(pred, gt).total:7.4f} {s.total:7.4f} {s.angle_lambda:7.4f}")

# The angle term is 0 on the axes and 1 on the diagonal.
print("\nangle cost at 0, 22.5 and 45 degrees:", [round(angle_cost(np.cos(a), np.sin(a)), 4) for a in np.radians([0, 22.5, 45])])

# Shape exponent: larger theta flattens the shape penalty for small mismatches.
pred = BBox(0.53, 0.52, 0.3, 0.17)
for theta in (1, 2, 4, 8):
    print(f"theta {theta}: shape term {siou_loss(pred, gt, SIoUParams(theta_exponent=theta)).shape_omega:.5f}")

# Analytic gradient vs central differences.
r = siou_loss(pred, gt)
print("\nd SIoU / d(cx, cy, w, h):", np.round(r.gradient, 5))
print("relative error against central differences:", f"{loss_gradient_check('siou', pred, gt):.2e}")
