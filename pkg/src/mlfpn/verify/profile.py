"""Mean absolute activation per (scale, level) block of the pre-attention pyramid."""

from __future__ import annotations

import io

import numpy as np


def activation_profile(aggregates, num_levels: int, channels: int) -> np.ndarray:
    """(S, L) matrix; entry (i, l) averages |x| over channel block l of scale i."""
    prof = np.zeros((len(aggregates), num_levels))
    for i, x in enumerate(aggregates):
        if x.shape[1] != num_levels * channels:
            raise ValueError(f"scale {i + 1}: {x.shape[1]} channels, expected {num_levels * channels}")
        blocks = np.abs(x.astype(np.float64)).reshape(x.shape[0], num_levels, channels, -1)
        prof[i] = blocks.mean(axis=(0, 2, 3))
    return prof


def profile_csv(profile: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("scale,level,mean_abs\n")
    for i, row in enumerate(profile, start=1):
        for l, v in enumerate(row, start=1):
            buf.write(f"{i},{l},{float(v)!r}\n")
    return buf.getvalue()
