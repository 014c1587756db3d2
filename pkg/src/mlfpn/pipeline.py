"""Backbone -> MLFPN -> SFAM glue."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mlfpn.backbone import backbone_forward
from mlfpn.mlfpn import mlfpn_forward, sfam_aggregate


@dataclass
class ForwardResult:
    shallow: np.ndarray
    deep: np.ndarray
    base: np.ndarray
    levels: list
    pyramid: list


def forward(image: np.ndarray, model, trace=None) -> ForwardResult:
    if trace is not None:
        trace.add_input("image", image.shape)
    shallow, deep = backbone_forward(image, model, trace)
    base, levels = mlfpn_forward(shallow, deep, model, trace)
    pyramid = sfam_aggregate(levels, model, trace)
    return ForwardResult(shallow, deep, base, levels, pyramid)


def forward_pyramid(image: np.ndarray, model, trace=None) -> list:
    return forward(image, model, trace).pyramid
