"""Network configuration and its JSON form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from mlfpn.errors import ConfigError

NUM_SCALES = 6
ANCHORS_PER_CELL = 6

# Encoder of every TUM: five 3x3 stride-2 convs. The last one is unpadded so
# a 3x3 map (320 input) lands on 1x1.
TUM_KERNEL = 3
TUM_STRIDE = 2
TUM_PADS = (1, 1, 1, 1, 0)

# Backbone stub: stages 1-2 have fixed widths, stage 3 is the shallow tap
# (stride 8) and stage 4 the deep tap (stride 16).
BACKBONE_STEM_WIDTHS = (64, 128)

JSON_FIELDS = (
    "input_size",
    "num_tums",
    "tum_channels",
    "base_compress_shallow",
    "base_compress_deep",
    "se_reduction",
    "num_classes",
    "seed",
)
# Accepted in JSON as well, for reduced configs.
EXTRA_JSON_FIELDS = (
    "shallow_channels",
    "deep_channels",
    "stem_depth",
    "score_thresh",
    "iou_thresh",
    "final_cutoff",
    "pre_nms_top",
    "top_k",
    "clip_anchors",
)


def tum_scale_sizes(base_size: int) -> list[int]:
    """Spatial sizes of the six TUM scales for a square base feature."""
    sizes = [base_size]
    for pad in TUM_PADS:
        sizes.append((sizes[-1] + 2 * pad - TUM_KERNEL) // TUM_STRIDE + 1)
    return sizes


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 320
    shallow_channels: int = 512
    deep_channels: int = 1024
    stem_depth: int = 2
    seed: int = 0

    shallow_stride = 8
    deep_stride = 16

    def __post_init__(self):
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.stem_depth < 1:
            raise ConfigError(f"stem_depth must be >= 1, got {self.stem_depth}")
        if self.shallow_channels < 1 or self.deep_channels < 1:
            raise ConfigError("backbone channel counts must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def shallow_size(self) -> int:
        return self.input_size // self.shallow_stride

    @property
    def deep_size(self) -> int:
        return self.input_size // self.deep_stride


@dataclass(frozen=True)
class MlfpnConfig:
    num_tums: int = 8
    tum_channels: int = 256
    base_compress_shallow: int = 256
    base_compress_deep: int = 512
    se_reduction: int = 16

    num_scales = NUM_SCALES

    def __post_init__(self):
        if self.num_tums < 1:
            raise ConfigError(f"num_tums must be >= 1, got {self.num_tums}")
        if self.se_reduction < 1:
            raise ConfigError(f"se_reduction must be >= 1, got {self.se_reduction}")
        if self.tum_channels < self.se_reduction:
            raise ConfigError(
                f"tum_channels ({self.tum_channels}) must be >= se_reduction ({self.se_reduction})"
            )
        if self.base_compress_shallow < 1 or self.base_compress_deep < 1:
            raise ConfigError("base compression widths must be >= 1")

    @property
    def base_channels(self) -> int:
        return self.base_compress_shallow + self.base_compress_deep

    @property
    def pyramid_channels(self) -> int:
        return self.num_tums * self.tum_channels

    @property
    def se_hidden(self) -> int:
        return self.pyramid_channels // self.se_reduction


@dataclass(frozen=True)
class NetworkConfig:
    """Full architecture and post-processing schedule."""

    input_size: int = 320
    num_tums: int = 8
    tum_channels: int = 256
    base_compress_shallow: int = 256
    base_compress_deep: int = 512
    se_reduction: int = 16
    num_classes: int = 81
    seed: int = 0
    shallow_channels: int = 512
    deep_channels: int = 1024
    stem_depth: int = 2
    score_thresh: float = 0.05
    iou_thresh: float = 0.3
    final_cutoff: float = 0.01
    pre_nms_top: int = 1000
    top_k: int = 200
    clip_anchors: bool = True
    variances: tuple = field(default=(0.1, 0.1, 0.2, 0.2))

    def __post_init__(self):
        # Sub-configs validate their own fields.
        self.backbone
        self.mlfpn
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2 (background + 1), got {self.num_classes}")
        if self.pre_nms_top < 1 or self.top_k < 1:
            raise ConfigError("pre_nms_top and top_k must be >= 1")
        sizes = tum_scale_sizes(self.backbone.shallow_size)
        if min(sizes) < 1:
            raise ConfigError(
                f"input_size {self.input_size}: base feature {sizes[0]}x{sizes[0]} cannot pass "
                f"the TUM encoder schedule (scale sizes {sizes})"
            )

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            input_size=self.input_size,
            shallow_channels=self.shallow_channels,
            deep_channels=self.deep_channels,
            stem_depth=self.stem_depth,
            seed=self.seed,
        )

    @property
    def mlfpn(self) -> MlfpnConfig:
        return MlfpnConfig(
            num_tums=self.num_tums,
            tum_channels=self.tum_channels,
            base_compress_shallow=self.base_compress_shallow,
            base_compress_deep=self.base_compress_deep,
            se_reduction=self.se_reduction,
        )

    @property
    def scale_sizes(self) -> list[int]:
        return tum_scale_sizes(self.backbone.shallow_size)

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        doc = {k: getattr(self, k) for k in JSON_FIELDS + EXTRA_JSON_FIELDS}
        return json.dumps(doc, indent=2)


def _check_field(name: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(
            f"field {name!r}: expected {type(default).__name__}, got {type(value).__name__} {value!r}"
        )


def config_from_dict(doc: dict, source: str = "<config>") -> NetworkConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    defaults = NetworkConfig()
    allowed = set(JSON_FIELDS + EXTRA_JSON_FIELDS)
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigError(f"{source}: unknown field {key!r}")
        _check_field(key, value, getattr(defaults, key))
    try:
        return NetworkConfig(**doc)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> NetworkConfig:
    """Read a JSON network config; raises ``FileNotFoundError`` or ``ConfigError``."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc, str(path))
