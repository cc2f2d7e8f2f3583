"""Raster operations on 8-bit images.

Images are ``uint8`` arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}``.
Pixel ``(row i, col j)`` has its center at normalized coordinate
``((j + 0.5) / W, (i + 0.5) / H)``; the same half-pixel convention is used by
the warp and by the resize.
"""

from __future__ import annotations

import numpy as np

from .geometry import AffineMatrix


def as_image(a) -> np.ndarray:
    """Validate and normalize an array to ``(H, W, C)`` uint8."""
    a = np.asarray(a)
    if a.dtype != np.uint8:
        raise ValueError(f"images must be uint8, got {a.dtype}")
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"image shape must be (H, W) or (H, W, 1|3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return a


def _to_uint8(v: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(v, 0, 255)).astype(np.uint8)


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # x, y are pixel-center coordinates; neighbours are clamped to the edge
    h, w = img.shape[:2]
    xf = np.floor(x)
    yf = np.floor(y)
    fx = (x - xf)[..., None]
    fy = (y - yf)[..., None]
    x0 = np.clip(xf.astype(np.int64), 0, w - 1)
    y0 = np.clip(yf.astype(np.int64), 0, h - 1)
    x1 = np.clip(xf.astype(np.int64) + 1, 0, w - 1)
    y1 = np.clip(yf.astype(np.int64) + 1, 0, h - 1)
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_image(img, m: AffineMatrix, fill: int = 0) -> np.ndarray:
    """Warp ``img`` by ``m`` applied about the image center.

    Each output pixel is pulled from the inverse-mapped input location with
    bilinear interpolation. Locations outside the source canvas get ``fill``.
    """
    img = as_image(img)
    if m.is_identity():
        return img.copy()
    h, w = img.shape[:2]
    inv = m.about_center().inverse().array
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = (jj + 0.5) / w
    v = (ii + 0.5) / h
    su = inv[0, 0] * u + inv[0, 1] * v + inv[0, 2]
    sv = inv[1, 0] * u + inv[1, 1] * v + inv[1, 2]
    x = su * w - 0.5
    y = sv * h - 0.5
    inside = (su >= 0) & (su <= 1) & (sv >= 0) & (sv <= 1)
    out = np.full(img.shape, float(fill))
    out[inside] = _bilinear(img, x[inside], y[inside])
    return _to_uint8(out)


def gaussian_kernel(radius: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps with half-width ``radius`` and sigma ``radius / 2``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return np.ones(1)
    sigma = radius / 2.0
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(k**2) / (2 * sigma**2))
    return g / g.sum()


def _convolve_axis(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = (len(taps) - 1) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for t, wt in enumerate(taps):
        out += wt * np.take(p, np.arange(t, t + n), axis=axis)
    return out


def gaussian_blur(img, radius: int) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders. Radius 0 is a no-op."""
    img = as_image(img)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return img.copy()
    taps = gaussian_kernel(int(radius))
    a = img.astype(np.float64)
    a = _convolve_axis(a, taps, axis=1)
    a = _convolve_axis(a, taps, axis=0)
    return _to_uint8(a)


def resize(img, size: int, height: int | None = None) -> np.ndarray:
    """Bilinear resample to ``size x size`` (or ``size`` wide by ``height`` tall).

    Output pixel ``j`` samples source coordinate ``(j + 0.5) * W_in / W_out - 0.5``,
    clamped to the valid range.
    """
    img = as_image(img)
    out_w = int(size)
    out_h = int(size if height is None else height)
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be >= 1")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    # separable: same per-pixel arithmetic as _bilinear, done row then column
    src = img.astype(np.float64)
    x0 = np.floor(xs).astype(np.int64)
    fx = (xs - x0)[None, :, None]
    x1 = np.minimum(x0 + 1, w - 1)
    rows = src[:, x0] * (1 - fx) + src[:, x1] * fx
    y0 = np.floor(ys).astype(np.int64)
    fy = (ys - y0)[:, None, None]
    y1 = np.minimum(y0 + 1, h - 1)
    return _to_uint8(rows[y0] * (1 - fy) + rows[y1] * fy)
