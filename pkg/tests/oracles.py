"""Slow reference implementations used as test oracles."""

import numpy as np


def brute_conv(x, k, b=None, d=1):
    """Nested-loop zero-padded 'same' convolution."""
    cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for c in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            yy = y + (i - kh // 2) * d
                            xj = xx + (j - kw // 2) * d
                            if 0 <= yy < h and 0 <= xj < w:
                                acc += k[o, c, i, j] * x[c, yy, xj]
                out[o, y, xx] = acc + (0.0 if b is None else b[o])
    return out
