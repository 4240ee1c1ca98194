"""The conditional video denoiser.

Layout of a forward pass (all tensors channel-first, frames as depth):

    z_t (B,C,F,H,W) --UNet encoder--> f_z (B,hidden,F,h,w)
    garment images+heatmaps ----------> tokens (B, h*w, hidden)
    driving 2D heatmaps --UNet------> f_2d (B,c2d,F,h,w)
    driving 3D keypoints --4 dense--> f_3d broadcast to (B,c3d,F,h,w)
    DiT blocks: pose grid concatenated channel-wise before self-attention,
                garment tokens cross-attended as keys/values
    UNet decoder with skips --------> v_hat (B,C,F,H,W)

Temporal units (3D conv / temporal attention / frame mixing) sit after the
two lowest-resolution stages of the video encoder and decoder and exist in
two identically shaped copies; exactly one copy ("real" or "spin") runs per
forward, so gradients of the inactive copy are exactly zero. Everything
else, including the garment encoder, is shared between branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import (
    Attention,
    BranchedTemporal,
    DiTBlock,
    Downsample,
    ResBlock2d,
    TimeEmbedding,
    Upsample,
    _group_norm,
)
from .config import ModelConfig

SENTINEL_VALUE = -1.0

BRANCHES = ("real", "spin")

PARAM_TREES = ("shared", "temporal_real", "temporal_spin")


@dataclass
class GarmentEmbedding:
    """Flattened garment feature map used as cross-attention keys/values."""

    tokens: torch.Tensor  # (B, n_tokens, hidden)


@dataclass
class PoseFeatures:
    """Pose conditioning grid, spatially aligned with the video features."""

    grid: torch.Tensor  # (B, c_pose, F, h, w)


def _to_frames(x: torch.Tensor) -> tuple[torch.Tensor, int]:
    B, C, Fr, H, W = x.shape
    return x.permute(0, 2, 1, 3, 4).reshape(B * Fr, C, H, W), Fr


def _to_video(x: torch.Tensor, n_frames: int) -> torch.Tensor:
    BF, C, H, W = x.shape
    return x.reshape(BF // n_frames, n_frames, C, H, W).permute(0, 2, 1, 3, 4)


class UNetEncoder(nn.Module):
    def __init__(
        self,
        in_ch: int,
        base: int,
        n_down: int,
        out_dim: int,
        spatial_kernel=(3, 3),
        time_dim: int | None = None,
        temporal_cfg: dict | None = None,
    ):
        super().__init__()
        self.n_down = n_down
        self.stem = nn.Conv2d(in_ch, base, 3, padding=1)
        self.res = nn.ModuleList()
        self.down = nn.ModuleList()
        self.temporal = nn.ModuleDict()
        ch = base
        for i in range(n_down):
            self.res.append(ResBlock2d(ch, time_dim, spatial_kernel))
            self.down.append(Downsample(ch, ch * 2))
            ch *= 2
            if temporal_cfg is not None and i >= n_down - 2:
                self.temporal[str(i)] = BranchedTemporal(ch, **temporal_cfg)
        self.mid = ResBlock2d(ch, time_dim, spatial_kernel)
        self.proj = nn.Conv2d(ch, out_dim, 1)

    def forward(self, x, t_emb=None, branch=None):
        h, n_frames = _to_frames(x)
        t2 = t_emb.repeat_interleave(n_frames, dim=0) if t_emb is not None else None
        h = self.stem(h)
        skips = []
        for i in range(self.n_down):
            h = self.res[i](h, t2)
            skips.append(_to_video(h, n_frames))
            h = self.down[i](h)
            if str(i) in self.temporal:
                h = _to_frames(self.temporal[str(i)](_to_video(h, n_frames), branch))[0]
        h = self.mid(h, t2)
        return _to_video(self.proj(h), n_frames), skips


class UNetDecoder(nn.Module):
    def __init__(
        self,
        out_ch: int,
        base: int,
        n_down: int,
        in_dim: int,
        spatial_kernel=(3, 3),
        time_dim: int | None = None,
        temporal_cfg: dict | None = None,
    ):
        super().__init__()
        self.n_down = n_down
        ch = base * 2**n_down
        self.proj = nn.Conv2d(in_dim, ch, 1)
        self.mid = ResBlock2d(ch, time_dim, spatial_kernel)
        self.temporal = nn.ModuleDict()
        self.up = nn.ModuleDict()
        self.fuse = nn.ModuleDict()
        self.res = nn.ModuleDict()
        for i in reversed(range(n_down)):
            if temporal_cfg is not None and i >= n_down - 2:
                self.temporal[str(i)] = BranchedTemporal(ch, **temporal_cfg)
            self.up[str(i)] = Upsample(ch, ch // 2)
            self.fuse[str(i)] = nn.Conv2d(ch, ch // 2, 1)
            self.res[str(i)] = ResBlock2d(ch // 2, time_dim, spatial_kernel)
            ch //= 2
        self.head = nn.Sequential(_group_norm(base), nn.SiLU(), nn.Conv2d(base, out_ch, 3, padding=1))

    def forward(self, f, skips, t_emb=None, branch=None):
        h, n_frames = _to_frames(f)
        t2 = t_emb.repeat_interleave(n_frames, dim=0) if t_emb is not None else None
        h = self.mid(self.proj(h), t2)
        for i in reversed(range(self.n_down)):
            if str(i) in self.temporal:
                h = _to_frames(self.temporal[str(i)](_to_video(h, n_frames), branch))[0]
            h = self.up[str(i)](h)
            skip = _to_frames(skips[i])[0]
            h = self.fuse[str(i)](torch.cat([h, skip], dim=1))
            h = self.res[str(i)](h, t2)
        return _to_video(self.head(h), n_frames)


class GarmentVDM(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        temporal_cfg = dict(
            n_heads=c.n_heads,
            max_frames=c.n_frames,
            kernel=c.temporal_kernel,
            width=c.temporal_width,
        )
        self.time_embed = TimeEmbedding(c.hidden_size)
        self.encoder_video = UNetEncoder(
            c.channels, c.base_channels, c.n_down_blocks, c.hidden_size,
            c.spatial_kernel, time_dim=c.hidden_size, temporal_cfg=temporal_cfg,
        )
        garment_in = c.garment_slots * (c.channels + c.n_keypoints)
        self.encoder_garment = UNetEncoder(
            garment_in, c.base_channels, c.n_down_blocks, c.hidden_size, c.spatial_kernel,
        )
        self.encoder_pose2d = UNetEncoder(
            c.n_keypoints, c.pose_base_channels, c.n_down_blocks, c.pose2d_channels, c.spatial_kernel,
        )
        self.encoder_pose3d = nn.Sequential(
            nn.Linear(c.n_keypoints * 3, c.hidden_size),
            nn.SiLU(),
            nn.Linear(c.hidden_size, c.hidden_size),
            nn.SiLU(),
            nn.Linear(c.hidden_size, c.hidden_size),
            nn.SiLU(),
            nn.Linear(c.hidden_size, c.pose3d_channels),
        )
        self.dit = nn.ModuleList(
            [DiTBlock(c.hidden_size, c.n_heads, c.pose_channels, c.mlp_ratio) for _ in range(c.n_dit_blocks)]
        )
        self.decoder = UNetDecoder(
            c.channels, c.base_channels, c.n_down_blocks, c.hidden_size,
            c.spatial_kernel, time_dim=c.hidden_size, temporal_cfg=temporal_cfg,
        )
        self.null_garment = nn.Parameter(0.02 * torch.randn(c.n_tokens, c.hidden_size))
        self.null_pose = nn.Parameter(torch.zeros(c.pose_channels))

    # ---- conditioning encoders -------------------------------------------------

    def encode_garment(self, images: torch.Tensor, heatmaps: torch.Tensor) -> GarmentEmbedding:
        """images: (B, S, C, H, W) segmented with sentinel background, 1 <= S <= 3;
        heatmaps: (B, S, K, H, W) aligned 2D poses. Missing slots are padded
        with sentinel images and zero heatmaps."""
        c = self.config
        B, S = images.shape[:2]
        if not 1 <= S <= c.garment_slots:
            raise ValueError(f"expected 1..{c.garment_slots} garment images, got {S}")
        if S < c.garment_slots:
            pad = c.garment_slots - S
            images = torch.cat(
                [images, torch.full((B, pad, *images.shape[2:]), SENTINEL_VALUE,
                                    dtype=images.dtype, device=images.device)], dim=1)
            heatmaps = torch.cat(
                [heatmaps, torch.zeros((B, pad, *heatmaps.shape[2:]),
                                       dtype=heatmaps.dtype, device=heatmaps.device)], dim=1)
        slots = torch.cat([images, heatmaps], dim=2)          # (B, slots, C+K, H, W)
        x = slots.reshape(B, -1, *slots.shape[3:])            # channel-wise concatenation
        feat, _ = self.encoder_garment(x[:, :, None])         # single-frame pass
        B_, D, _, h, w = feat.shape
        tokens = feat[:, :, 0].permute(0, 2, 3, 1).reshape(B_, h * w, D)
        return GarmentEmbedding(tokens=tokens)

    def encode_pose(self, heatmaps: torch.Tensor, keypoints3d: torch.Tensor) -> PoseFeatures:
        """heatmaps: (B, F, K, H, W); keypoints3d: (B, F, K, 3)."""
        if heatmaps.shape[1] != keypoints3d.shape[1]:
            raise ValueError("frame count mismatch between 2D and 3D poses")
        B, Fr = heatmaps.shape[:2]
        f2d, _ = self.encoder_pose2d(heatmaps.permute(0, 2, 1, 3, 4))
        h, w = f2d.shape[-2:]
        f3d = self.encoder_pose3d(keypoints3d.reshape(B, Fr, -1))      # (B, F, c3d)
        f3d = f3d.permute(0, 2, 1)[:, :, :, None, None].expand(-1, -1, -1, h, w)
        return PoseFeatures(grid=torch.cat([f2d, f3d], dim=1))

    def null_conditioning(self, batch_size: int = 1, n_frames: int | None = None) -> tuple[GarmentEmbedding, PoseFeatures]:
        """Learned null embeddings, used for dropout and the CFG null group."""
        c = self.config
        n_frames = n_frames or c.n_frames
        h, w = c.fusion_resolution
        tokens = self.null_garment[None].expand(batch_size, -1, -1)
        grid = self.null_pose[None, :, None, None, None].expand(batch_size, -1, n_frames, h, w)
        return GarmentEmbedding(tokens=tokens), PoseFeatures(grid=grid)

    # ---- denoising pass --------------------------------------------------------

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        garment: GarmentEmbedding,
        pose: PoseFeatures,
        branch: str,
    ) -> torch.Tensor:
        """Predict v for the noisy clip; output shape equals z_t."""
        if branch not in BRANCHES:
            raise ValueError(f"unknown branch {branch!r}")
        if z_t.shape[2] != pose.grid.shape[2]:
            raise ValueError("pose frames do not match video frames")
        if t.ndim == 0:
            t = t[None].expand(z_t.shape[0])
        t_emb = self.time_embed(t).to(z_t.dtype)
        f, skips = self.encoder_video(z_t, t_emb, branch)
        B, D, Fr, h, w = f.shape
        x = f.permute(0, 2, 3, 4, 1).reshape(B, Fr * h * w, D)
        pose_tokens = pose.grid.permute(0, 2, 3, 4, 1).reshape(B, Fr * h * w, -1)
        for block in self.dit:
            x = block(x, pose_tokens, garment.tokens, t_emb)
        f = x.reshape(B, Fr, h, w, D).permute(0, 4, 1, 2, 3)
        return self.decoder(f, skips, t_emb, branch)


# ---- parameter bookkeeping -----------------------------------------------------


def tree_of(name: str) -> str:
    parts = name.split(".")
    if "temporal_real" in parts:
        return "temporal_real"
    if "temporal_spin" in parts:
        return "temporal_spin"
    return "shared"


def params_by_tree(model: nn.Module) -> dict[str, dict[str, torch.Tensor]]:
    trees: dict[str, dict[str, torch.Tensor]] = {t: {} for t in PARAM_TREES}
    for name, p in model.named_parameters():
        trees[tree_of(name)][name] = p
    return trees


def branch_param_names(model: nn.Module, branch: str) -> list[str]:
    return sorted(params_by_tree(model)[f"temporal_{branch}"])


def parameter_checksum(model: nn.Module) -> str:
    import hashlib

    digest = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def copy_branch_params(model: nn.Module, src: str = "real", dst: str = "spin") -> None:
    """Copy one temporal tree onto the other (testing aid)."""
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name in branch_param_names(model, src):
            params[name.replace(f"temporal_{src}", f"temporal_{dst}")].copy_(params[name])


def build_model(config: ModelConfig, seed: int = 0) -> GarmentVDM:
    """Construct a model with deterministic, seed-controlled initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = GarmentVDM(config)
    return model
