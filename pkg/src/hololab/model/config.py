"""Network configuration and named presets."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict


@dataclass(frozen=True)
class ModelConfig:
    n_down_blocks: int = 2
    base_channels: int = 24
    n_dit_blocks: int = 2
    n_heads: int = 2
    hidden_size: int = 48
    n_frames: int = 8
    resolution: tuple[int, int] = (32, 24)
    temporal_kernel: tuple[int, int, int] = (4, 3, 3)
    spatial_kernel: tuple[int, int] = (3, 3)
    channels: int = 3
    n_keypoints: int = 8
    garment_slots: int = 3
    pose_base_channels: int = 8
    pose2d_channels: int = 8
    pose3d_channels: int = 8
    temporal_width: int = 12
    mlp_ratio: int = 2

    def __post_init__(self):
        H, W = self.resolution
        d = 2**self.n_down_blocks
        if H % d or W % d:
            raise ValueError(f"resolution {self.resolution} not divisible by 2^{self.n_down_blocks}")
        if self.hidden_size % self.n_heads:
            raise ValueError("hidden_size must be divisible by n_heads")

    @property
    def fusion_resolution(self) -> tuple[int, int]:
        d = 2**self.n_down_blocks
        return self.resolution[0] // d, self.resolution[1] // d

    @property
    def n_tokens(self) -> int:
        h, w = self.fusion_resolution
        return h * w

    @property
    def pose_channels(self) -> int:
        return self.pose2d_channels + self.pose3d_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("resolution", "temporal_kernel", "spatial_kernel"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    """CPU-trainable default: 32x24, 8 frames, hidden 64."""
    return ModelConfig(**overrides)


def paper_scale_config() -> ModelConfig:
    """Full-scale preset (not CPU-trainable; kept as a valid config point)."""
    return ModelConfig(
        n_down_blocks=4,
        base_channels=128,
        n_dit_blocks=8,
        n_heads=8,
        hidden_size=2048,
        n_frames=32,
        resolution=(512, 384),
        temporal_width=256,
        pose_base_channels=64,
        pose2d_channels=64,
        pose3d_channels=64,
        mlp_ratio=4,
    )


def micro_config(**overrides) -> ModelConfig:
    """Tiny config for gradient checks and fast unit tests."""
    cfg = dict(
        n_down_blocks=1,
        base_channels=8,
        n_dit_blocks=1,
        n_heads=2,
        hidden_size=16,
        n_frames=2,
        resolution=(8, 8),
        pose_base_channels=8,
        pose2d_channels=8,
        pose3d_channels=8,
        temporal_width=8,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)
