"""Channel-then-spatial attention on a small feature map.

Run: python3 demos/04_attention.py
"""

import numpy as np

from pcbview import cbam_forward, channel_attention, init_weights, spatial_attention
from pcbview.cbam import zero_weights

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 32, 12, 12)).astype(np.float32)
# plant a bright blob so the spatial gate has something to find
x[:, :, 4:7, 4:7] += 3.0

w = init_weights(32, r=16, k=7, seed=1)
ca = channel_attention(x, w)
print("channel gate: shape", ca.shape, "range", f"[{ca.min():.3f}, {ca.max():.3f}]")

sa = spatial_attention(x * ca, w)
print("spatial gate: shape", sa.shape)
print(np.round(sa[0, 0], 2))

y = cbam_forward(x, w)
print("\noutput shape matches input:", y.shape == x.shape)

# With all weights zero both gates are sigmoid(0) = 0.5, so the block scales by 1/4.
z = cbam_forward(x, zero_weights(32))
print("zero weights give 0.25 * x:", np.allclose(z, 0.25 * x, atol=1e-6))
