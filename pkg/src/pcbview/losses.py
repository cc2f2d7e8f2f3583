"""Box-regression losses (IoU, CIoU, SIoU) with closed-form gradients.

All gradients are taken with respect to the predicted box's ``(cx, cy, w, h)``.
At the non-smooth points (min/max ties between box edges, ``|.|`` at zero)
the one-sided derivative that the branch structure selects is returned.

Naming used below for one box pair:

* ``ex, ey``: signed center offsets ``gt - pred``; the angle term uses their
  magnitudes ``center_dx = |ex|`` and ``center_dy = |ey|``.
* ``enclose_w, enclose_h``: size of the smallest box covering both boxes,
  which normalizes the distance term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import BBox

_ZERO = np.zeros(4)
_DX = np.array([1.0, 0.0, 0.0, 0.0])
_DY = np.array([0.0, 1.0, 0.0, 0.0])
_DW = np.array([0.0, 0.0, 1.0, 0.0])
_DH = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SIoUParams:
    theta_exponent: float = 4.0
    sigma_epsilon: float = 1e-9

    def __post_init__(self):
        if not 1 <= self.theta_exponent <= 8:
            raise ValueError(f"theta_exponent must be in [1, 8], got {self.theta_exponent}")
        if not self.sigma_epsilon > 0:
            raise ValueError("sigma_epsilon must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    """Components of one loss evaluation.

    For SIoU ``total = 1 - iou + (distance_delta + shape_omega) / 2``. For
    CIoU the distance slot holds ``d^2 / c^2``, the shape slot holds
    ``alpha * v``, the angle slot is 0, and
    ``total = 1 - iou + distance_delta + shape_omega``.
    """

    iou: float
    angle_lambda: float
    distance_delta: float
    shape_omega: float
    total: float
    gradient: np.ndarray


@dataclass(frozen=True)
class _PairGeometry:
    iou: float
    d_iou: np.ndarray
    ex: float
    ey: float
    enclose_w: float
    d_enclose_w: np.ndarray
    enclose_h: float
    d_enclose_h: np.ndarray


def _pair_geometry(pred: BBox, gt: BBox) -> _PairGeometry:
    px0, py0, px1, py1 = pred.corners
    gx0, gy0, gx1, gy1 = gt.corners
    d_x0, d_x1 = _DX - 0.5 * _DW, _DX + 0.5 * _DW
    d_y0, d_y1 = _DY - 0.5 * _DH, _DY + 0.5 * _DH

    # intersection extent
    ir, d_ir = (px1, d_x1) if px1 < gx1 else (gx1, _ZERO)
    il, d_il = (px0, d_x0) if px0 > gx0 else (gx0, _ZERO)
    ib, d_ib = (py1, d_y1) if py1 < gy1 else (gy1, _ZERO)
    it, d_it = (py0, d_y0) if py0 > gy0 else (gy0, _ZERO)
    iw, ih = ir - il, ib - it
    if iw > 0 and ih > 0:
        inter = iw * ih
        d_inter = (d_ir - d_il) * ih + iw * (d_ib - d_it)
    else:
        inter, d_inter = 0.0, _ZERO

    area_p = (px1 - px0) * (py1 - py0)
    d_area_p = (py1 - py0) * _DW + (px1 - px0) * _DH
    area_g = (gx1 - gx0) * (gy1 - gy0)
    union = area_p + area_g - inter
    iou = inter / union
    d_iou = (d_inter * union - inter * (d_area_p - d_inter)) / union**2

    er, d_er = (px1, d_x1) if px1 > gx1 else (gx1, _ZERO)
    el, d_el = (px0, d_x0) if px0 < gx0 else (gx0, _ZERO)
    eb, d_eb = (py1, d_y1) if py1 > gy1 else (gy1, _ZERO)
    et, d_et = (py0, d_y0) if py0 < gy0 else (gy0, _ZERO)

    return _PairGeometry(
        iou=min(iou, 1.0),
        d_iou=d_iou,
        ex=gt.cx - pred.cx,
        ey=gt.cy - pred.cy,
        enclose_w=er - el,
        d_enclose_w=d_er - d_el,
        enclose_h=eb - et,
        d_enclose_h=d_eb - d_et,
    )


def angle_cost(center_dx: float, center_dy: float, sigma_epsilon: float = 1e-9) -> float:
    """``1 - 2 sin^2(arcsin(dy / sigma) - pi/4)``, zero for coincident centers."""
    sigma = math.hypot(center_dx, center_dy)
    if sigma < sigma_epsilon:
        return 0.0
    s = min(max(center_dy / sigma, 0.0), 1.0)
    return 1.0 - 2.0 * math.sin(math.asin(s) - math.pi / 4) ** 2


def _angle_partials(a: float, b: float) -> tuple[float, float]:
    # the angle cost equals 2ab / (a^2 + b^2)
    s2 = a * a + b * b
    return 2 * b * (b * b - a * a) / s2**2, 2 * a * (a * a - b * b) / s2**2


def _relative_size(p: float, g: float, d_p: np.ndarray) -> tuple[float, np.ndarray]:
    # |p - g| / max(p, g)
    if p > g:
        return (p - g) / p, (g / p**2) * d_p
    if p < g:
        return (g - p) / g, (-1.0 / g) * d_p
    return 0.0, _ZERO


def siou_loss(pred: BBox, gt: BBox, params: Optional[SIoUParams] = None) -> LossBreakdown:
    params = params or SIoUParams()
    g = _pair_geometry(pred, gt)
    d_ex, d_ey = -_DX, -_DY

    a, b = abs(g.ex), abs(g.ey)
    lam = angle_cost(a, b, params.sigma_epsilon)
    if math.hypot(a, b) < params.sigma_epsilon:
        d_lam = _ZERO
    else:
        pa, pb = _angle_partials(a, b)
        d_lam = pa * math.copysign(1.0, g.ex) * d_ex + pb * math.copysign(1.0, g.ey) * d_ey
    gamma = 2.0 - lam

    delta, d_delta = 0.0, np.zeros(4)
    for e, d_e, c, d_c in ((g.ex, d_ex, g.enclose_w, g.d_enclose_w), (g.ey, d_ey, g.enclose_h, g.d_enclose_h)):
        rho = (e / c) ** 2
        d_rho = 2 * (e / c) * (d_e * c - e * d_c) / c**2
        decay = math.exp(-gamma * rho)
        delta += 1.0 - decay
        d_delta += decay * (gamma * d_rho - rho * d_lam)

    theta = params.theta_exponent
    omega, d_omega = 0.0, np.zeros(4)
    for p, q, d_p in ((pred.w, gt.w, _DW), (pred.h, gt.h, _DH)):
        rel, d_rel = _relative_size(p, q, d_p)
        base = 1.0 - math.exp(-rel)
        omega += base**theta
        if base > 0:
            d_omega += theta * base ** (theta - 1) * math.exp(-rel) * d_rel

    total = 1.0 - g.iou + (delta + omega) / 2
    grad = -g.d_iou + (d_delta + d_omega) / 2
    return LossBreakdown(g.iou, lam, delta, omega, total, grad)


def ciou_loss(pred: BBox, gt: BBox) -> LossBreakdown:
    """Complete-IoU loss ``1 - IoU + d^2/c^2 + alpha * v``.

    The gradient differentiates through ``alpha`` as well; detectors often
    treat ``alpha`` as a constant during backprop, which gives a different
    vector.
    """
    g = _pair_geometry(pred, gt)
    d_ex, d_ey = -_DX, -_DY

    d2 = g.ex**2 + g.ey**2
    d_d2 = 2 * g.ex * d_ex + 2 * g.ey * d_ey
    c2 = g.enclose_w**2 + g.enclose_h**2
    d_c2 = 2 * g.enclose_w * g.d_enclose_w + 2 * g.enclose_h * g.d_enclose_h
    dist = d2 / c2
    d_dist = d_d2 / c2 - d2 * d_c2 / c2**2

    k = 4 / math.pi**2
    gap = math.atan(gt.w / gt.h) - math.atan(pred.w / pred.h)
    v = k * gap**2
    n2 = pred.w**2 + pred.h**2
    d_v = -2 * k * gap * (pred.h / n2) * _DW + 2 * k * gap * (pred.w / n2) * _DH

    denom = (1.0 - g.iou) + v
    if v == 0.0 or denom == 0.0:
        aspect, d_aspect = 0.0, np.zeros(4)
    else:
        aspect = v * v / denom
        d_aspect = (2 * v * d_v * denom - v * v * (d_v - g.d_iou)) / denom**2

    total = 1.0 - g.iou + dist + aspect
    grad = -g.d_iou + d_dist + d_aspect
    return LossBreakdown(g.iou, 0.0, dist, aspect, total, grad)


def iou_loss(pred: BBox, gt: BBox) -> LossBreakdown:
    g = _pair_geometry(pred, gt)
    return LossBreakdown(g.iou, 0.0, 0.0, 0.0, 1.0 - g.iou, -g.d_iou)


LOSSES: dict[str, Callable[..., LossBreakdown]] = {
    "iou": lambda p, g, params=None: iou_loss(p, g),
    "ciou": lambda p, g, params=None: ciou_loss(p, g),
    "siou": siou_loss,
}


class NonSmoothPointError(ValueError):
    pass


def smoothness_margin(loss_id: str, pred: BBox, gt: BBox, params: Optional[SIoUParams] = None) -> float:
    """Distance (in box units) from the nearest locus where the loss has a kink."""
    px0, py0, px1, py1 = pred.corners
    gx0, gy0, gx1, gy1 = gt.corners
    gaps = [
        abs(px0 - gx0), abs(px1 - gx1), abs(py0 - gy0), abs(py1 - gy1),
        # intersection appearing or vanishing
        abs(min(px1, gx1) - max(px0, gx0)), abs(min(py1, gy1) - max(py0, gy0)),
    ]
    if loss_id == "siou":
        params = params or SIoUParams()
        ex, ey = gt.cx - pred.cx, gt.cy - pred.cy
        gaps += [abs(ex), abs(ey), abs(pred.w - gt.w), abs(pred.h - gt.h)]
        gaps.append(abs(math.hypot(ex, ey) - params.sigma_epsilon))
    return min(gaps)


def loss_gradient_check(
    loss_id: str, pred: BBox, gt: BBox, params: Optional[SIoUParams] = None, step: float = 1e-5
) -> float:
    """Max relative error between the analytic gradient and central differences.

    Errors are normwise: ``max_i |a_i - n_i| / max(|a|_inf, |n|_inf, 1e-6)``,
    so a component that happens to sit near zero is not judged on its own.
    Raises :class:`NonSmoothPointError` when the evaluation point sits within
    ``10 * step`` of a kink, where central differences are meaningless.
    """
    if loss_id not in LOSSES:
        raise ValueError(f"unknown loss {loss_id!r}; choose from {sorted(LOSSES)}")
    if not step > 0:
        raise ValueError("step must be positive")
    if smoothness_margin(loss_id, pred, gt, params) < 10 * step:
        raise NonSmoothPointError(f"{loss_id} evaluation point is within {10 * step:g} of a non-smooth locus")
    fn = LOSSES[loss_id]
    analytic = fn(pred, gt, params).gradient
    base = np.array(pred.astuple())
    numeric = np.empty(4)
    for i in range(4):
        hi, lo = base.copy(), base.copy()
        hi[i] += step
        lo[i] -= step
        numeric[i] = (fn(BBox(*hi), gt, params).total - fn(BBox(*lo), gt, params).total) / (2 * step)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-6)
    return float(np.abs(analytic - numeric).max() / scale)


def sample_smooth_pair(rng: np.random.Generator, loss_id: str, step: float = 1e-5, params=None) -> tuple[BBox, BBox]:
    """Random box pair at least ``10 * step`` away from every kink."""
    while True:
        pred = BBox(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.02, 0.4, 2))
        if rng.uniform() < 0.5:
            # overlapping pairs: jitter the prediction
            c = rng.normal(0.0, 0.25, 2) * (pred.w, pred.h)
            s = np.exp(rng.normal(0.0, 0.3, 2))
            gt = BBox(pred.cx + c[0], pred.cy + c[1], pred.w * s[0], pred.h * s[1])
        else:
            gt = BBox(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.02, 0.4, 2))
        if smoothness_margin(loss_id, pred, gt, params) >= 10 * step:
            return pred, gt
