"""Multi-level feature pyramid: FFMv1, the FFMv2/TUM stack, and SFAM.

Level ``l`` (1-based) is the ``l``-th TUM; scale ``i`` (1-based) is the
``i``-th largest spatial resolution. Every conv here is a Conv->ReLU block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mlfpn.backbone import stage_layers
from mlfpn.config import NUM_SCALES
from mlfpn.errors import ConfigError, MlfpnError, ShapeError
from mlfpn.tensor import (
    ACCUM,
    add,
    concat_channels,
    conv2d,
    dense,
    global_avg_pool,
    relu,
    sigmoid,
    upsample_to,
)


@dataclass
class TumOutput:
    """Decoder outputs of one TUM, largest scale first."""

    features: list

    @property
    def largest(self) -> np.ndarray:
        return self.features[0]


@dataclass
class PyramidLevel:
    """One scale of the aggregated pyramid.

    ``aggregated`` is the channel concat over levels (TUM order), ``attention``
    the SE coefficients per item, ``features`` the reweighted map.
    """

    scale_index: int
    aggregated: np.ndarray
    attention: np.ndarray
    features: np.ndarray


def tum_output_name(level: int, scale: int) -> str:
    """Trace name of the layer producing scale ``scale`` (1-based) of TUM ``level``."""
    return f"tum{level}.enc5" if scale == NUM_SCALES else f"tum{level}.smooth{scale - 1}"


def _block(model, name, x, src, trace):
    y = relu(conv2d(x, model.conv(name), name))
    if trace is not None:
        layer = model.params[name]
        trace.add(name, "conv+relu", [src], [x.shape], y.shape, layer.weight.size + layer.bias.size)
    return y


def ffm_v1(shallow: np.ndarray, deep: np.ndarray, model, trace=None) -> np.ndarray:
    """Base feature: concat(conv3x3(shallow), upsample(conv1x1(deep)))."""
    sh, sw = shallow.shape[2:]
    dh, dw = deep.shape[2:]
    if (sh, sw) != (2 * dh, 2 * dw):
        raise ShapeError(f"ffm_v1: deep map {dh}x{dw} is not half of shallow map {sh}x{sw}")
    a = _block(model, "ffm1.shallow", shallow, stage_layers(model.cfg, 3)[-1], trace)
    b = _block(model, "ffm1.deep", deep, stage_layers(model.cfg, 4)[-1], trace)
    up = upsample_to(b, sh, sw)
    base = concat_channels([a, up])
    if trace is not None:
        trace.add("ffm1.upsample", "upsample", ["ffm1.deep"], [b.shape], up.shape)
        trace.add("ffm1.concat", "concat", ["ffm1.shallow", "ffm1.upsample"],
                  [a.shape, up.shape], base.shape)
    return base


def ffm_v2(base: np.ndarray, prev_largest: np.ndarray, model, level: int, trace=None) -> np.ndarray:
    """Input of TUM ``level`` >= 2: concat(conv1x1(base), largest output of TUM ``level - 1``)."""
    if base.shape[2:] != prev_largest.shape[2:]:
        raise ShapeError(
            f"ffm_v2: base {base.shape[2:]} and previous largest {prev_largest.shape[2:]} differ in scale"
        )
    c = model.cfg.tum_channels
    if prev_largest.shape[1] != c:
        raise ShapeError(f"ffm_v2: previous largest feature has {prev_largest.shape[1]} channels, expected {c}")
    name = f"ffm2.{level}"
    comp = _block(model, name, base, "ffm1.concat", trace)
    out = concat_channels([comp, prev_largest])
    if trace is not None:
        prev = tum_output_name(level - 1, 1)
        trace.add(f"{name}.concat", "concat", [name, prev], [comp.shape, prev_largest.shape], out.shape)
    return out


def tum_forward(x: np.ndarray, model, level: int, src: str, trace=None) -> TumOutput:
    """Thinned U-shape module.

    Encoder: e0 = input, e_k = conv3x3/2(e_{k-1}) for k = 1..5.
    Decoder: d5 = e5; d_k = smooth_k(upsample(d_{k+1}) + lat_k(e_k)) for k = 4..0.
    """
    enc, names = [x], [src]
    for k in range(1, 6):
        name = f"tum{level}.enc{k}"
        enc.append(_block(model, name, enc[-1], names[-1], trace))
        names.append(name)

    dec = [None] * 6
    dec[5], top = enc[5], names[5]
    for k in range(4, -1, -1):
        h, w = enc[k].shape[2:]
        up = upsample_to(dec[k + 1], h, w)
        lat = _block(model, f"tum{level}.lat{k}", enc[k], names[k], trace)
        summed = add(up, lat)
        if trace is not None:
            trace.add(f"tum{level}.up{k}", "upsample", [top], [dec[k + 1].shape], up.shape)
            trace.add(f"tum{level}.sum{k}", "add", [f"tum{level}.up{k}", f"tum{level}.lat{k}"],
                      [up.shape, lat.shape], summed.shape)
        top = f"tum{level}.smooth{k}"
        dec[k] = _block(model, top, summed, f"tum{level}.sum{k}", trace)
    return TumOutput(dec)


def mlfpn_forward(shallow: np.ndarray, deep: np.ndarray, model, trace=None):
    """Run FFMv1 and the TUM stack; returns ``(base, [TumOutput per level])``.

    TUM 1 sees only the (adapted) base feature; TUM l > 1 sees
    ``ffm_v2(base, largest output of TUM l-1)``.
    """
    base = ffm_v1(shallow, deep, model, trace)
    levels = []
    for level in range(1, model.cfg.num_tums + 1):
        try:
            if level == 1:
                x = _block(model, "ffm2.1", base, "ffm1.concat", trace)
                src = "ffm2.1"
            else:
                x = ffm_v2(base, levels[-1].largest, model, level, trace)
                src = f"ffm2.{level}.concat"
            levels.append(tum_forward(x, model, level, src, trace))
        except MlfpnError as exc:
            raise type(exc)(f"TUM {level}: {exc}") from exc
    return base, levels


def _se_checks(x, w1, b1, w2, b2):
    c = x.shape[1]
    hid = w1.shape[0]
    if w1.shape != (hid, c) or w2.shape != (c, hid) or b1.shape != (hid,) or b2.shape != (c,):
        raise ConfigError(
            f"se: weights W1 {w1.shape}, b1 {b1.shape}, W2 {w2.shape}, b2 {b2.shape} "
            f"do not fit {c} channels"
        )


def se_attention(x: np.ndarray, w1, b1, w2, b2) -> tuple[np.ndarray, np.ndarray]:
    """Squeeze-excitation reweighting.

    ``s = sigmoid(W2 relu(W1 z + b1) + b2)`` with ``z`` the channel means;
    returns ``(s[:, :, None, None] * x, s)`` with ``s`` of shape (n, c).
    """
    _se_checks(x, w1, b1, w2, b2)
    z = global_avg_pool(x)
    s = sigmoid(dense(relu(dense(z, w1, b1)), w2, b2))
    return x * s[:, :, None, None], s


def se_backward(x, w1, b1, w2, b2, upstream) -> dict:
    """Gradients of ``sum(upstream * se_attention(x)[0])``, computed in float64.

    Returns a dict with keys ``x``, ``w1``, ``b1``, ``w2``, ``b2``. Weight
    gradients are summed over the batch.
    """
    _se_checks(x, w1, b1, w2, b2)
    if upstream.shape != x.shape:
        raise ConfigError(f"se_backward: upstream {upstream.shape} does not match input {x.shape}")
    x, g = x.astype(ACCUM), upstream.astype(ACCUM)
    w1, b1, w2, b2 = (a.astype(ACCUM) for a in (w1, b1, w2, b2))
    hw = x.shape[2] * x.shape[3]

    z = x.mean(axis=(2, 3))
    a1 = z @ w1.T + b1
    h1 = np.maximum(a1, 0.0)
    s = sigmoid(h1 @ w2.T + b2)

    ds = (g * x).sum(axis=(2, 3))
    da2 = ds * s * (1.0 - s)
    dh1 = da2 @ w2
    da1 = dh1 * (a1 > 0)
    dz = da1 @ w1
    return {
        "x": g * s[:, :, None, None] + (dz / hw)[:, :, None, None],
        "w1": da1.T @ z,
        "b1": da1.sum(axis=0),
        "w2": da2.T @ h1,
        "b2": da2.sum(axis=0),
    }


def sfam_aggregate(levels: list, model, trace=None) -> list:
    """Concatenate scale ``i`` across levels, then apply that scale's SE block."""
    num_levels = len(levels)
    for l, out in enumerate(levels, start=1):
        if len(out.features) != NUM_SCALES:
            raise ShapeError(f"sfam: TUM {l} has {len(out.features)} scales, expected {NUM_SCALES}")
    aggregates = []
    for i in range(1, NUM_SCALES + 1):
        parts = [out.features[i - 1] for out in levels]
        sizes = {p.shape[2:] for p in parts}
        if len(sizes) != 1:
            raise ShapeError(f"sfam: scale {i} has ragged spatial sizes {sorted(sizes)} across levels")
        agg = concat_channels(parts)
        if trace is not None:
            trace.add(f"sfam.scale{i}.concat", "concat",
                      [tum_output_name(l, i) for l in range(1, num_levels + 1)],
                      [p.shape for p in parts], agg.shape)
        aggregates.append(agg)

    pyramid = []
    for i, agg in enumerate(aggregates, start=1):
        fc1, fc2 = model.dense(f"sfam.scale{i}.fc1"), model.dense(f"sfam.scale{i}.fc2")
        feats, s = se_attention(agg, fc1.weight, fc1.bias, fc2.weight, fc2.bias)
        if trace is not None:
            n_params = sum(a.size for a in (*fc1, *fc2))
            trace.add(f"sfam.scale{i}.se", "se", [f"sfam.scale{i}.concat"], [agg.shape],
                      feats.shape, n_params)
        pyramid.append(PyramidLevel(i, agg, s, feats))
    return pyramid
