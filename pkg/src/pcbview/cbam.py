"""Convolutional block attention on small NCHW float32 tensors.

Channel attention gates each channel with
``sigmoid(mlp(avgpool(x)) + mlp(maxpool(x)))``; spatial attention then gates
each location with ``sigmoid(conv_kxk([mean_c(x), max_c(x)]))``. Both gates are
multiplied into the feature map in that order.

Weight blob layout (little-endian)::

    b"CBAM"  uint32 channels  uint32 reduction  uint32 kernel_size
    float32[hidden*C] fc1_w  float32[hidden] fc1_b
    float32[C*hidden] fc2_w  float32[C] fc2_b
    float32[2*k*k] conv_w    float32[1] conv_b
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CBAM"
_HEADER = struct.Struct("<4sIII")

_F32_LO = np.nextafter(np.float32(0), np.float32(1))
_F32_HI = np.nextafter(np.float32(1), np.float32(0))


@dataclass(frozen=True)
class CbamWeights:
    channels: int
    reduction: int
    kernel_size: int
    fc1_w: np.ndarray  # (hidden, C)
    fc1_b: np.ndarray  # (hidden,)
    fc2_w: np.ndarray  # (C, hidden)
    fc2_b: np.ndarray  # (C,)
    conv_w: np.ndarray  # (2, k, k), input order (mean, max)
    conv_b: float

    def __post_init__(self):
        _check_config(self.channels, self.reduction, self.kernel_size)
        c, hid, k = self.channels, self.hidden, self.kernel_size
        shapes = {
            "fc1_w": (hid, c), "fc1_b": (hid,), "fc2_w": (c, hid), "fc2_b": (c,), "conv_w": (2, k, k),
        }
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "conv_b", float(np.float32(self.conv_b)))

    @property
    def hidden(self) -> int:
        return self.channels // self.reduction

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, self.channels, self.reduction, self.kernel_size)
        parts = [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b, self.conv_w, np.float32([self.conv_b])]
        return head + b"".join(p.astype("<f4").tobytes() for p in parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CbamWeights":
        if len(blob) < _HEADER.size:
            raise ValueError("weight blob is truncated")
        magic, c, r, k = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        _check_config(c, r, k)
        hid = c // r
        sizes = [hid * c, hid, c * hid, c, 2 * k * k, 1]
        expected = _HEADER.size + 4 * sum(sizes)
        if len(blob) != expected:
            raise ValueError(f"weight blob has {len(blob)} bytes, expected {expected}")
        flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).astype(np.float32)
        chunks, pos = [], 0
        for n in sizes:
            chunks.append(flat[pos : pos + n])
            pos += n
        return cls(
            c, r, k,
            chunks[0].reshape(hid, c), chunks[1], chunks[2].reshape(c, hid), chunks[3],
            chunks[4].reshape(2, k, k), float(chunks[5][0]),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CbamWeights":
        return cls.from_bytes(Path(path).read_bytes())


def _check_config(c: int, r: int, k: int) -> None:
    if c < 1 or r < 1:
        raise ValueError("channels and reduction must be positive")
    if c % r:
        raise ValueError(f"reduction ratio {r} does not divide {c} channels")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")


def init_weights(c: int, r: int = 16, k: int = 7, seed: int = 0) -> CbamWeights:
    """Seeded uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` per layer."""
    _check_config(c, r, k)
    rng = np.random.default_rng(seed)
    hid = c // r

    def u(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape).astype(np.float32)

    fc1_w, fc1_b = u(c, (hid, c)), u(c, hid)
    fc2_w, fc2_b = u(hid, (c, hid)), u(hid, c)
    conv_w, conv_b = u(2 * k * k, (2, k, k)), u(2 * k * k, 1)
    return CbamWeights(c, r, k, fc1_w, fc1_b, fc2_w, fc2_b, conv_w, float(conv_b[0]))


def zero_weights(c: int, r: int = 16, k: int = 7) -> CbamWeights:
    hid = c // r
    return CbamWeights(
        c, r, k, np.zeros((hid, c)), np.zeros(hid), np.zeros((c, hid)), np.zeros(c), np.zeros((2, k, k)), 0.0
    )


def _check_input(x: np.ndarray, w: CbamWeights) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ValueError(f"expected a non-empty NCHW tensor, got shape {x.shape}")
    if x.shape[1] != w.channels:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.channels}")
    return x


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _gate(z, dtype):
    g = _sigmoid(z).astype(dtype)
    if dtype == np.float32:
        # float32 rounding would otherwise saturate to exactly 0 or 1
        g = np.clip(g, _F32_LO, _F32_HI)
    return g


def _mlp(v: np.ndarray, w: CbamWeights) -> np.ndarray:
    # v: (N, C)
    z1 = v @ w.fc1_w.T.astype(np.float64) + w.fc1_b
    return np.maximum(z1, 0.0) @ w.fc2_w.T.astype(np.float64) + w.fc2_b


def _channel_logits(x64: np.ndarray, w: CbamWeights) -> np.ndarray:
    avg = x64.mean(axis=(2, 3))
    mx = x64.max(axis=(2, 3))
    return _mlp(avg, w) + _mlp(mx, w)


def _conv_same(feat: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # cross-correlation with zero padding; feat (N, 2, H, W), kernel (2, k, k)
    n, _, h, wd = feat.shape
    k = kernel.shape[-1]
    p = (k - 1) // 2
    padded = np.pad(feat, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, h, wd))
    for c in range(kernel.shape[0]):
        for i in range(k):
            for j in range(k):
                out += kernel[c, i, j] * padded[:, c, i : i + h, j : j + wd]
    return out


def _spatial_logits(x64: np.ndarray, w: CbamWeights) -> np.ndarray:
    feat = np.stack([x64.mean(axis=1), x64.max(axis=1)], axis=1)
    return (_conv_same(feat, w.conv_w.astype(np.float64)) + w.conv_b)[:, None]


def channel_attention(x, w: CbamWeights, dtype=np.float32) -> np.ndarray:
    """Channel gate of shape ``(N, C, 1, 1)``."""
    x = _check_input(x, w)
    return _gate(_channel_logits(x.astype(np.float64), w), dtype)[:, :, None, None]


def spatial_attention(x, w: CbamWeights, dtype=np.float32) -> np.ndarray:
    """Spatial gate of shape ``(N, 1, H, W)``; ``x`` may have any channel count."""
    x = np.asarray(x)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ValueError(f"expected a non-empty NCHW tensor, got shape {x.shape}")
    return _gate(_spatial_logits(x.astype(np.float64), w), dtype)


def cbam_forward(x, w: CbamWeights, dtype=np.float32) -> np.ndarray:
    x = _check_input(x, w).astype(dtype)
    y1 = x * channel_attention(x, w, dtype)
    return y1 * spatial_attention(y1, w, dtype)


def cbam_jvp(x, w: CbamWeights, direction) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass and its directional derivative along ``direction``, in float64.

    Max pooling routes the derivative through the first maximal element.
    """
    x = _check_input(x, w).astype(np.float64)
    dx = np.asarray(direction, dtype=np.float64)
    if dx.shape != x.shape:
        raise ValueError("direction must match the input shape")
    n, c, h, wd = x.shape
    w1, w2 = w.fc1_w.astype(np.float64), w.fc2_w.astype(np.float64)

    def mlp_jvp(v, dv):
        z1 = v @ w1.T + w.fc1_b
        mask = z1 > 0
        return (np.where(mask, z1, 0.0) @ w2.T + w.fc2_b, np.where(mask, dv @ w1.T, 0.0) @ w2.T)

    def max_jvp(a, da, axis_shape):
        flat = a.reshape(axis_shape + (-1,))
        idx = flat.argmax(axis=-1)
        dflat = da.reshape(axis_shape + (-1,))
        return np.take_along_axis(flat, idx[..., None], -1)[..., 0], np.take_along_axis(dflat, idx[..., None], -1)[..., 0]

    avg, d_avg = x.mean(axis=(2, 3)), dx.mean(axis=(2, 3))
    mx, d_mx = max_jvp(x, dx, (n, c))
    za, dza = mlp_jvp(avg, d_avg)
    zm, dzm = mlp_jvp(mx, d_mx)
    ca = _sigmoid(za + zm)[:, :, None, None]
    dca = (ca[:, :, 0, 0] * (1 - ca[:, :, 0, 0]) * (dza + dzm))[:, :, None, None]
    y1 = x * ca
    dy1 = dx * ca + x * dca

    m_c, dm_c = y1.mean(axis=1), dy1.mean(axis=1)
    t1, dt1 = np.moveaxis(y1, 1, -1), np.moveaxis(dy1, 1, -1)
    x_c, dx_c = max_jvp(t1, dt1, (n, h, wd))
    kern = w.conv_w.astype(np.float64)
    s = _conv_same(np.stack([m_c, x_c], axis=1), kern) + w.conv_b
    ds = _conv_same(np.stack([dm_c, dx_c], axis=1), kern)
    sa = _sigmoid(s)[:, None]
    dsa = (_sigmoid(s) * (1 - _sigmoid(s)) * ds)[:, None]
    return y1 * sa, dy1 * sa + y1 * dsa


def cbam_forward_naive(x, w: CbamWeights) -> np.ndarray:
    """Nested-loop reference forward pass (slow; for cross-checking only)."""
    x = _check_input(x, w)
    n, c, h, wd = x.shape
    k, hid = w.kernel_size, w.hidden
    p = (k - 1) // 2
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
    out = np.zeros(x.shape, dtype=np.float32)
    for b in range(n):
        avg = [0.0] * c
        mx = [0.0] * c
        for ch in range(c):
            vals = [float(x[b, ch, i, j]) for i in range(h) for j in range(wd)]
            avg[ch] = sum(vals) / len(vals)
            mx[ch] = max(vals)

        def mlp(v):
            hidden = []
            for u in range(hid):
                z = float(w.fc1_b[u]) + sum(float(w.fc1_w[u, q]) * v[q] for q in range(c))
                hidden.append(max(z, 0.0))
            return [float(w.fc2_b[q]) + sum(float(w.fc2_w[q, u]) * hidden[u] for u in range(hid)) for q in range(c)]

        ma, mm = mlp(avg), mlp(mx)
        gate_c = [sig(ma[q] + mm[q]) for q in range(c)]
        y1 = np.zeros((c, h, wd))
        for ch in range(c):
            for i in range(h):
                for j in range(wd):
                    y1[ch, i, j] = float(x[b, ch, i, j]) * gate_c[ch]
        mean_map = [[sum(y1[ch, i, j] for ch in range(c)) / c for j in range(wd)] for i in range(h)]
        max_map = [[max(y1[ch, i, j] for ch in range(c)) for j in range(wd)] for i in range(h)]
        maps = (mean_map, max_map)
        for i in range(h):
            for j in range(wd):
                z = w.conv_b
                for m in range(2):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                z += float(w.conv_w[m, di, dj]) * maps[m][ii][jj]
                g = sig(z)
                for ch in range(c):
                    out[b, ch, i, j] = y1[ch, i, j] * g
    return out
