"""Stand-in classification backbone exposing a stride-8 and a stride-16 tap.

Four stages of Conv3x3->ReLU blocks; the first block of each stage has
stride 2. Stage 3 output plays the role of conv4_3 (shallow), stage 4 the
role of conv5_3 (deep).
"""

from __future__ import annotations

import numpy as np

from mlfpn.config import BACKBONE_STEM_WIDTHS
from mlfpn.errors import ShapeError
from mlfpn.tensor import check_tensor4, conv2d, relu


def stage_layers(cfg, stage: int) -> list[str]:
    return [f"backbone.stage{stage}.conv{j}" for j in range(1, cfg.stem_depth + 1)]


def backbone_forward(image: np.ndarray, model, trace=None) -> tuple[np.ndarray, np.ndarray]:
    cfg = model.cfg
    check_tensor4(image, "image")
    size = cfg.input_size
    if image.shape[1:] != (3, size, size):
        raise ShapeError(f"backbone: expected image (n, 3, {size}, {size}), got {image.shape}")

    x, src = image, "image"
    taps = []
    for stage in range(1, len(BACKBONE_STEM_WIDTHS) + 3):
        for name in stage_layers(cfg, stage):
            y = relu(conv2d(x, model.conv(name), name))
            if trace is not None:
                layer = model.params[name]
                trace.add(name, "conv+relu", [src], [x.shape], y.shape,
                          layer.weight.size + layer.bias.size)
            x, src = y, name
        taps.append(x)
    return taps[-2], taps[-1]
