"""Parameter layout, initialisation, and the on-disk parameter store."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from mlfpn import mtsr
from mlfpn.config import (
    ANCHORS_PER_CELL,
    BACKBONE_STEM_WIDTHS,
    NUM_SCALES,
    TUM_KERNEL,
    TUM_PADS,
    TUM_STRIDE,
    NetworkConfig,
)
from mlfpn.errors import FormatError
from mlfpn.rng import glorot_uniform
from mlfpn.tensor import ConvParams

MANIFEST = "manifest.txt"


@dataclass(frozen=True)
class LayerSpec:
    """One parameterised layer: a conv (rank-4 weight) or a dense layer (rank-2)."""

    name: str
    group: str
    weight_shape: tuple
    stride: int = 1
    pad: int = 0

    @property
    def is_conv(self) -> bool:
        return len(self.weight_shape) == 4

    @property
    def out_features(self) -> int:
        return self.weight_shape[0]

    @property
    def fans(self) -> tuple[int, int]:
        out, inp = self.weight_shape[:2]
        rf = int(np.prod(self.weight_shape[2:])) if self.is_conv else 1
        return inp * rf, out * rf

    @property
    def num_params(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_features


def _conv(name, group, cin, cout, k, stride=1, pad=None):
    return LayerSpec(name, group, (cout, cin, k, k), stride, k // 2 if pad is None else pad)


def backbone_specs(cfg: NetworkConfig) -> list[LayerSpec]:
    widths = BACKBONE_STEM_WIDTHS + (cfg.shallow_channels, cfg.deep_channels)
    specs, cin = [], 3
    for s, cout in enumerate(widths, start=1):
        for j in range(1, cfg.stem_depth + 1):
            stride = 2 if j == 1 else 1
            specs.append(_conv(f"backbone.stage{s}.conv{j}", "backbone", cin, cout, 3, stride))
            cin = cout
    return specs


def tum_specs(cfg: NetworkConfig, level: int) -> list[LayerSpec]:
    c = cfg.tum_channels
    specs = []
    for k in range(1, 6):
        cin = 2 * c if k == 1 else c
        specs.append(
            _conv(f"tum{level}.enc{k}", "tums", cin, c, TUM_KERNEL, TUM_STRIDE, TUM_PADS[k - 1])
        )
    for k in range(5):
        specs.append(_conv(f"tum{level}.lat{k}", "tums", 2 * c if k == 0 else c, c, 1))
    for k in range(5):
        specs.append(_conv(f"tum{level}.smooth{k}", "tums", c, c, 1))
    return specs


def layer_specs(cfg: NetworkConfig) -> list[LayerSpec]:
    """Every parameterised layer in execution order."""
    m = cfg.mlfpn
    c, b = m.tum_channels, m.base_channels
    specs = backbone_specs(cfg)
    specs.append(_conv("ffm1.shallow", "ffm", cfg.shallow_channels, m.base_compress_shallow, 3))
    specs.append(_conv("ffm1.deep", "ffm", cfg.deep_channels, m.base_compress_deep, 1))
    for level in range(1, m.num_tums + 1):
        # ffm2.1 is the first TUM's adapter (B -> 2C); later ones compress B -> C.
        specs.append(_conv(f"ffm2.{level}", "ffm", b, 2 * c if level == 1 else c, 1))
        specs.extend(tum_specs(cfg, level))
    lc, hid = m.pyramid_channels, m.se_hidden
    for i in range(1, NUM_SCALES + 1):
        specs.append(LayerSpec(f"sfam.scale{i}.fc1", "sfam", (hid, lc)))
        specs.append(LayerSpec(f"sfam.scale{i}.fc2", "sfam", (lc, hid)))
    a, k = ANCHORS_PER_CELL, cfg.num_classes
    for i in range(1, NUM_SCALES + 1):
        specs.append(_conv(f"head.scale{i}.loc", "heads", lc, a * 4, 3))
        specs.append(_conv(f"head.scale{i}.conf", "heads", lc, a * k, 3))
    return specs


class Layer(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray


def init_params(cfg: NetworkConfig, zero: bool = False) -> dict[str, Layer]:
    """Glorot-uniform weights keyed by (seed, layer name); zero biases."""
    params = {}
    for spec in layer_specs(cfg):
        if zero:
            w = np.zeros(spec.weight_shape, dtype=np.float32)
        else:
            w = glorot_uniform(cfg.seed, spec.name, spec.weight_shape, *spec.fans)
        params[spec.name] = Layer(w, np.zeros(spec.out_features, dtype=np.float32))
    return params


@dataclass
class Model:
    cfg: NetworkConfig
    params: dict

    def __post_init__(self):
        self._specs = {s.name: s for s in layer_specs(self.cfg)}

    def conv(self, name: str) -> ConvParams:
        spec = self._specs[name]
        layer = self.params[name]
        return ConvParams(layer.weight, layer.bias, spec.stride, spec.pad)

    def dense(self, name: str) -> Layer:
        return self.params[name]

    def num_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.params.values())


def build_model(cfg: NetworkConfig, zero: bool = False) -> Model:
    return Model(cfg, init_params(cfg, zero=zero))


def _shape4(shape: tuple) -> tuple:
    return (1,) * (4 - len(shape)) + tuple(shape)


def _as4(a: np.ndarray) -> np.ndarray:
    return a.reshape(_shape4(a.shape))


def save_params(directory, params: dict[str, Layer]) -> None:
    """One MTSR file per weight and bias plus a ``key = file`` manifest.

    Rank-1/2 tensors are stored with leading unit dimensions.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, layer in params.items():
        for part, arr in (("weight", layer.weight), ("bias", layer.bias)):
            fname = f"{name}.{part}.mtsr"
            mtsr.save(directory / fname, _as4(arr))
            lines.append(f"{name}.{part} = {fname}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(directory) -> dict[str, str]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"parameter manifest not found: {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = file', got {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def load_params(directory, cfg: NetworkConfig) -> dict[str, Layer]:
    """Load a parameter store and check every tensor against the layer layout of ``cfg``."""
    directory = Path(directory)
    entries = read_manifest(directory)
    params = {}
    for spec in layer_specs(cfg):
        parts = []
        for part, shape in (("weight", spec.weight_shape), ("bias", (spec.out_features,))):
            key = f"{spec.name}.{part}"
            if key not in entries:
                raise FormatError(f"{directory}: manifest has no entry for {key}")
            arr = mtsr.load(directory / entries[key])
            if arr.shape != _shape4(shape):
                raise FormatError(f"{key}: stored shape {arr.shape}, layout expects {shape}")
            parts.append(np.ascontiguousarray(arr.reshape(shape)))
        params[spec.name] = Layer(*parts)
    return params
