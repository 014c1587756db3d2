"""Symbolic shape propagation through the network, without running any arithmetic.

Shapes and parameter counts are derived here from closed-form conv
arithmetic rather than from the executor's layer table, so comparing
this trace with an executed one checks the wiring.
"""

from __future__ import annotations

from mlfpn.config import BACKBONE_STEM_WIDTHS, NUM_SCALES, TUM_PADS, NetworkConfig
from mlfpn.errors import ConsistencyError, ShapeError
from mlfpn.tracing import ShapeTrace


def _conv_shape(shape, cout, k, stride, pad, name):
    n, _, h, w = shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"{name}: non-positive output {oh}x{ow} from {h}x{w}")
    return (n, cout, oh, ow)


class _Tracer:
    def __init__(self, batch: int):
        self.trace = ShapeTrace()
        self.shapes = {}
        self.batch = batch

    def input(self, name, shape):
        self.trace.add_input(name, shape)
        self.shapes[name] = tuple(shape)

    def conv(self, name, src, cout, k, stride=1, pad=None):
        pad = k // 2 if pad is None else pad
        shape = self.shapes[src]
        out = _conv_shape(shape, cout, k, stride, pad, name)
        self._emit(name, "conv+relu", [src], out, shape[1] * cout * k * k + cout)

    def upsample(self, name, src, like):
        n, c = self.shapes[src][:2]
        self._emit(name, "upsample", [src], (n, c) + self.shapes[like][2:])

    def add(self, name, a, b):
        if self.shapes[a] != self.shapes[b]:
            raise ConsistencyError(f"{name}: {a} {self.shapes[a]} vs {b} {self.shapes[b]}")
        self._emit(name, "add", [a, b], self.shapes[a])

    def concat(self, name, srcs):
        shapes = [self.shapes[s] for s in srcs]
        spatial = {(s[0],) + s[2:] for s in shapes}
        if len(spatial) != 1:
            raise ConsistencyError(f"{name}: cannot concat {srcs} with shapes {shapes}")
        n, _, h, w = shapes[0]
        self._emit(name, "concat", srcs, (n, sum(s[1] for s in shapes), h, w))

    def se(self, name, src, hidden):
        c = self.shapes[src][1]
        self._emit(name, "se", [src], self.shapes[src], 2 * hidden * c + hidden + c)

    def _emit(self, name, op, srcs, out, params=0):
        self.trace.add(name, op, srcs, [self.shapes[s] for s in srcs], out, params)
        self.shapes[name] = tuple(out)


def trace_shapes(cfg: NetworkConfig, batch: int = 1) -> ShapeTrace:
    """Per-layer shape trace from the image to the six pyramid features.

    The final six records are the reweighted pyramid (one per scale).
    """
    t = _Tracer(batch)
    t.input("image", (batch, 3, cfg.input_size, cfg.input_size))

    src = "image"
    widths = BACKBONE_STEM_WIDTHS + (cfg.shallow_channels, cfg.deep_channels)
    taps = []
    for s, width in enumerate(widths, start=1):
        for j in range(1, cfg.stem_depth + 1):
            name = f"backbone.stage{s}.conv{j}"
            t.conv(name, src, width, 3, stride=2 if j == 1 else 1)
            src = name
        taps.append(src)
    shallow, deep = taps[2], taps[3]

    t.conv("ffm1.shallow", shallow, cfg.base_compress_shallow, 3)
    t.conv("ffm1.deep", deep, cfg.base_compress_deep, 1)
    t.upsample("ffm1.upsample", "ffm1.deep", "ffm1.shallow")
    t.concat("ffm1.concat", ["ffm1.shallow", "ffm1.upsample"])

    c = cfg.tum_channels
    outputs = []
    for l in range(1, cfg.num_tums + 1):
        try:
            if l == 1:
                t.conv("ffm2.1", "ffm1.concat", 2 * c, 1)
                src = "ffm2.1"
            else:
                t.conv(f"ffm2.{l}", "ffm1.concat", c, 1)
                src = f"ffm2.{l}.concat"
                t.concat(src, [f"ffm2.{l}", outputs[-1][0]])
            enc = [src]
            for k, pad in enumerate(TUM_PADS, start=1):
                t.conv(f"tum{l}.enc{k}", enc[-1], c, 3, stride=2, pad=pad)
                enc.append(f"tum{l}.enc{k}")
            top = enc[5]
            dec = [None] * 5 + [top]
            for k in range(4, -1, -1):
                t.conv(f"tum{l}.lat{k}", enc[k], c, 1)
                t.upsample(f"tum{l}.up{k}", top, enc[k])
                t.add(f"tum{l}.sum{k}", f"tum{l}.up{k}", f"tum{l}.lat{k}")
                t.conv(f"tum{l}.smooth{k}", f"tum{l}.sum{k}", c, 1)
                top = dec[k] = f"tum{l}.smooth{k}"
        except ShapeError as exc:
            raise ShapeError(f"TUM {l}: {exc}") from None
        outputs.append(dec)

    for i in range(NUM_SCALES):
        t.concat(f"sfam.scale{i + 1}.concat", [dec[i] for dec in outputs])
    hidden = cfg.num_tums * c // cfg.se_reduction
    for i in range(1, NUM_SCALES + 1):
        t.se(f"sfam.scale{i}.se", f"sfam.scale{i}.concat", hidden)
    return t.trace


def pyramid_rows(trace: ShapeTrace):
    return [r for r in trace.records if r.op == "se"]


def compare_traces(expected: ShapeTrace, actual: ShapeTrace) -> None:
    """Raise ``ConsistencyError`` at the first record where two traces disagree."""
    if expected.inputs != actual.inputs:
        raise ConsistencyError(f"trace inputs differ: {expected.inputs} vs {actual.inputs}")
    for i, (a, b) in enumerate(zip(expected.records, actual.records)):
        if a != b:
            raise ConsistencyError(f"record {i}: symbolic {a} vs executed {b}")
    if len(expected) != len(actual):
        raise ConsistencyError(f"trace lengths differ: {len(expected)} vs {len(actual)}")
