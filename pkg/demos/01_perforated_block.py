"""Pixel gates on one residual block
===================================

A gated block runs its residual branch only where a binary mask is on and
passes the input through everywhere else.  This walk-through builds one
block, draws a mask from its gate head, checks the sparse result against a
dense reference, and prices the saving in FLOPs.

    python demos/01_perforated_block.py
"""

# %%
import numpy as np

from pagnet import autodiff as ad
from pagnet.blocks import ConvLayer, count_flops, init_block, pag_block, standard_block
from pagnet.gating import binary_gate

rng = np.random.default_rng(0)
channels, h, w = 16, 12, 12
block = init_block(channels, 2, rng, residual_scale=1.0)
x = rng.normal(size=(channels, h, w))

# %% [markdown]
# The gate head is a 1x1 conv with two outputs per pixel (off, on).  A fresh
# head is biased toward "on" so a new gate starts as the dense block; random
# weights stand in for a trained head here.  With no noise the on-channel
# wins wherever its logit is larger, and shifting it moves the active share.

# %%
print("initial gate bias (off, on):", block.gate_b)
block.gate_w = rng.normal(0.0, 0.3, block.gate_w.shape)
logits = ad.conv2d(x, block.gate_w).data
for shift in (-1.0, 0.0, 1.0):
    shifted = logits + np.array([0.0, shift])[:, None, None]
    mask = binary_gate(shifted, tau=1.0).data
    print(f"on-logit shift {shift:+.1f}: {mask.mean():.2f} of pixels active")

# %% [markdown]
# Sparse execution touches only the active pixels.  Its output equals a
# per-pixel choice between the full block and the identity.

# %%
mask = (rng.random((h, w)) < 0.4).astype(float)
sparse, _ = pag_block(x, block, mask=mask)
reference = np.where(mask[None] > 0, standard_block(x, block).data, x)
print("max |sparse - reference| =", np.abs(sparse.data - reference).max())

# %% [markdown]
# Cost: the 1x1 reduction and the gate head always run; the 3x3 and the 1x1
# expansion scale with the active fraction.

# %%
inner = channels // 2
layers = [
    ConvLayer("f1", h, w, channels, inner, 1, 1, block="b"),
    ConvLayer("gate", h, w, channels, 2, 1, 1, block="b"),
    ConvLayer("f2", h, w, inner, inner, 3, 3, block="b", gate_key="b"),
    ConvLayer("f3", h, w, inner, channels, 1, 1, block="b", gate_key="b"),
]
for density in (1.0, 0.7, 0.4, 0.0):
    report = count_flops(layers, {"b": density})
    print(f"density {density:.1f}: {report.total_gated:>9.0f} of {report.total_dense:.0f} FLOPs "
          f"(ratio {report.ratio:.3f})")
