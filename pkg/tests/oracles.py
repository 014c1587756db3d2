"""Slow, independent reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_loops(x, weight, bias, stride, pad):
    """Six nested loops over (n, co, oy, ox, ky, kx) with an inner channel sum in float64."""
    n, ci, h, w = x.shape
    co, _, kh, kw = weight.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xs = x.astype(np.float64).tolist()
    ws = weight.astype(np.float64).tolist()
    out = np.zeros((n, co, oh, ow), dtype=np.float32)
    for b in range(n):
        for o in range(co):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= w:
                                continue
                            for c in range(ci):
                                acc += xs[b][c][iy][ix] * ws[o][c][ky][kx]
                    out[b, o, oy, ox] = acc + float(bias[o])
    return out


def decode_one(t, anchor, variances=(0.1, 0.1, 0.2, 0.2)):
    """Scalar SSD decoding of a single box, clipped to [0, 1]."""
    acx, acy, aw, ah = anchor
    cx = acx + t[0] * variances[0] * aw
    cy = acy + t[1] * variances[1] * ah
    w = aw * math.exp(t[2] * variances[2])
    h = ah * math.exp(t[3] * variances[3])
    corners = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    return tuple(min(1.0, max(0.0, v)) for v in corners)


def profile_loops(aggregates, num_levels, channels):
    prof = np.zeros((len(aggregates), num_levels))
    for i, x in enumerate(aggregates):
        n, _, h, w = x.shape
        for l in range(num_levels):
            total = 0.0
            for b in range(n):
                for c in range(l * channels, (l + 1) * channels):
                    for y in range(h):
                        for xx in range(w):
                            total += abs(float(x[b, c, y, xx]))
            prof[i, l] = total / (n * channels * h * w)
    return prof
