from mlfpn import NetworkConfig


def small_config(**overrides):
    """Reduced widths that keep the 320 geometry; cheap enough for many runs."""
    base = dict(
        num_tums=2,
        tum_channels=16,
        base_compress_shallow=16,
        base_compress_deep=16,
        se_reduction=4,
        num_classes=5,
        shallow_channels=16,
        deep_channels=32,
        stem_depth=1,
    )
    base.update(overrides)
    return NetworkConfig(**base)
