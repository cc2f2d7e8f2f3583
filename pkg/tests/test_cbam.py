import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcbview.cbam import (
    CbamWeights,
    cbam_forward,
    cbam_forward_naive,
    cbam_jvp,
    channel_attention,
    init_weights,
    spatial_attention,
    zero_weights,
)


def sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def oracle_channel(x, w):
    """Direct summation: shared two-layer MLP on average and max pooled descriptors."""
    n, c = x.shape[:2]
    out = np.zeros((n, c, 1, 1))
    for b in range(n):
        desc = []
        for pool in (np.mean, np.max):
            v = np.array([pool(x[b, q].astype(np.float64)) for q in range(c)])
            hid = np.array([max(0.0, sum(float(w.fc1_w[u, q]) * v[q] for q in range(c)) + float(w.fc1_b[u])) for u in range(w.hidden)])
            desc.append(np.array([sum(float(w.fc2_w[q, u]) * hid[u] for u in range(w.hidden)) + float(w.fc2_b[q]) for q in range(c)]))
        out[b, :, 0, 0] = sig(desc[0] + desc[1])
    return out


def oracle_spatial(x, w):
    """Naive zero-padded k x k cross-correlation over the (mean, max) channel maps."""
    n, _, h, wd = x.shape
    k = w.kernel_size
    p = k // 2
    out = np.zeros((n, 1, h, wd))
    for b in range(n):
        maps = [x[b].astype(np.float64).mean(axis=0), x[b].astype(np.float64).max(axis=0)]
        for i in range(h):
            for j in range(wd):
                s = w.conv_b
                for m in range(2):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                s += float(w.conv_w[m, di, dj]) * maps[m][ii, jj]
                out[b, 0, i, j] = sig(s)
    return out


def randn(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


class TestChannel:
    def test_zero_weights(self):
        assert np.all(channel_attention(randn((2, 16, 5, 5)), zero_weights(16, 4)) == 0.5)

    def test_constant_input(self):
        w = init_weights(8, 2, 7, seed=3)
        v = np.arange(8, dtype=np.float32) / 4 - 1
        x = np.broadcast_to(v[None, :, None, None], (1, 8, 3, 3)).copy()
        hid = np.maximum(w.fc1_w.astype(float) @ v + w.fc1_b, 0)
        mlp = w.fc2_w.astype(float) @ hid + w.fc2_b
        assert np.allclose(channel_attention(x, w)[0, :, 0, 0], sig(2 * mlp), atol=1e-6)

    def test_matches_oracle(self):
        w = init_weights(8, 2, 7, seed=1)
        x = randn((1, 8, 4, 4), seed=2)
        assert np.abs(channel_attention(x, w) - oracle_channel(x, w)).max() <= 1e-5


class TestSpatial:
    def test_zero_weights(self):
        assert np.all(spatial_attention(randn((1, 4, 6, 6)), zero_weights(4, 1)) == 0.5)

    @given(st.integers(1, 12), st.integers(1, 12))
    def test_dims(self, h, wd):
        w = init_weights(4, 2, 7, seed=0)
        assert spatial_attention(randn((2, 4, h, wd)), w).shape == (2, 1, h, wd)

    def test_matches_oracle(self):
        w = init_weights(4, 1, 7, seed=5)
        x = randn((1, 4, 8, 8), seed=6)
        assert np.abs(spatial_attention(x, w) - oracle_spatial(x, w)).max() <= 1e-5


class TestForward:
    @pytest.mark.parametrize("c", [128, 256, 512])
    def test_shape(self, c):
        w = init_weights(c, 16, 7, seed=0)
        x = randn((1, c, 16, 16))
        y = cbam_forward(x, w)
        assert y.shape == x.shape and y.dtype == np.float32

    def test_zero_weights_quarter(self):
        x = randn((2, 32, 8, 8))
        assert np.abs(cbam_forward(x, zero_weights(32, 16)) - 0.25 * x).max() <= 1e-6

    @given(st.integers(0, 1000))
    def test_magnitude_bound(self, seed):
        w = init_weights(16, 4, 7, seed=seed)
        x = randn((1, 16, 6, 6), seed=seed) * 10
        assert np.all(np.abs(cbam_forward(x, w)) <= np.abs(x))

    def test_gates_strictly_inside(self):
        # huge logits would round to exactly 0 or 1 in float32 without clipping
        w = init_weights(16, 4, 7, seed=0)
        x = randn((1, 16, 6, 6)) * 1e4
        ca = channel_attention(x, w)
        sa = spatial_attention(x, w)
        for g in (ca, sa):
            assert g.min() > 0 and g.max() < 1

    def test_naive_oracle_largest(self):
        w = init_weights(32, 16, 7, seed=2)
        x = randn((2, 32, 16, 16), seed=3)
        assert np.abs(cbam_forward(x, w).astype(np.float64) - cbam_forward_naive(x, w)).max() <= 1e-5

    def test_naive_matches_composed_oracles(self):
        w = init_weights(8, 2, 7, seed=7)
        x = randn((1, 8, 5, 5), seed=8)
        y1 = x.astype(np.float64) * oracle_channel(x, w)
        y = y1 * oracle_spatial(y1, w)
        assert np.abs(cbam_forward_naive(x, w) - y).max() <= 1e-5

    def test_batch_permutation(self):
        w = init_weights(16, 4, 7, seed=1)
        x = randn((4, 16, 6, 6), seed=9)
        perm = [2, 0, 3, 1]
        assert np.array_equal(cbam_forward(x[perm], w), cbam_forward(x, w)[perm])
        assert np.array_equal(spatial_attention(x[perm], w), spatial_attention(x, w)[perm])

    def test_jvp(self):
        w = init_weights(16, 4, 7, seed=4)
        x = randn((1, 16, 6, 6), seed=10).astype(np.float64)
        d = np.random.default_rng(11).standard_normal(x.shape)
        y, dy = cbam_jvp(x, w, d)
        eps = 1e-6
        fd = (cbam_jvp(x + eps * d, w, d)[0] - cbam_jvp(x - eps * d, w, d)[0]) / (2 * eps)
        assert np.allclose(y, cbam_forward(x, w, dtype=np.float64), atol=1e-12)
        assert np.abs(dy - fd).max() / np.abs(fd).max() <= 1e-2

    def test_wrong_channels(self):
        with pytest.raises(ValueError):
            cbam_forward(randn((1, 8, 4, 4)), init_weights(16, 4))


class TestWeights:
    def test_deterministic(self):
        a, b = init_weights(128, 16, 7, seed=42), init_weights(128, 16, 7, seed=42)
        assert a.to_bytes() == b.to_bytes()
        assert a.hidden == 8

    def test_init_bounds(self):
        w = init_weights(64, 16, 7, seed=0)
        assert np.abs(w.fc1_w).max() <= 1 / math.sqrt(64)
        assert np.abs(w.fc2_w).max() <= 1 / math.sqrt(4)
        assert np.abs(w.conv_w).max() <= 1 / math.sqrt(98)

    @pytest.mark.parametrize("cfg", [(100, 16, 7), (16, 4, 6), (0, 1, 7)])
    def test_invalid_config(self, cfg):
        with pytest.raises(ValueError):
            init_weights(*cfg)

    def test_blob_round_trip(self, tmp_path):
        w = init_weights(32, 8, 5, seed=1)
        w.save(tmp_path / "w.bin")
        v = CbamWeights.load(tmp_path / "w.bin")
        x = randn((1, 32, 7, 7))
        assert np.array_equal(cbam_forward(x, w), cbam_forward(x, v))
        assert v.to_bytes() == w.to_bytes()

    def test_blob_errors(self):
        blob = init_weights(16, 4, 3, seed=0).to_bytes()
        for bad in (blob[:-4], b"XXXX" + blob[4:], blob[:8]):
            with pytest.raises(ValueError):
                CbamWeights.from_bytes(bad)
