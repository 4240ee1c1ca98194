"""Garment-atlas finetuning and the three inference pipelines.

An atlas is a free embedding with the exact shape of a garment encoding,
optimized against one dynamic video with every model parameter frozen:
per iteration a frame window is noised, the real branch predicts the
noise with the atlas standing in for the garment embedding, and only the
atlas takes the gradient step. At inference the atlas (or a fresh garment
encoding) conditions the spin branch to produce a static orbit.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import GuidanceWeights, NoiseSchedule, add_noise, eps_from_v, loss_eps, sample
from .model.network import GarmentEmbedding, GarmentVDM, PoseFeatures
from .world.render import SampleTuple, VideoTensor
from .world.rig import PoseSequence

INFERENCE_MODES = ("image_to_360", "video_to_360", "animate")


@dataclass
class AtlasState:
    embedding: torch.Tensor        # (n_tokens, hidden), same shape as garment encodings
    source_video_id: int
    iterations_done: int = 0
    losses: list[float] = field(default_factory=list)
    seed: int = 0
    lr: float = 1e-3


@dataclass
class InferenceRequest:
    mode: str                          # image_to_360 | video_to_360 | animate
    driving: PoseSequence
    images: list[np.ndarray] | None = None      # segmented (H, W, 3) conditioning views
    image_heatmaps: list[np.ndarray] | None = None
    video: SampleTuple | None = None   # dynamic source video (video_to_360)
    atlas: AtlasState | None = None    # reuse a previously finetuned atlas
    guidance: GuidanceWeights = field(default_factory=GuidanceWeights)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in INFERENCE_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        spin_modes = ("image_to_360", "video_to_360")
        if self.mode in spin_modes and self.driving.mode != "spin":
            raise ValueError(f"{self.mode} requires a spin driving sequence")
        if self.mode == "animate" and self.driving.mode != "dynamic":
            raise ValueError("animate requires a dynamic driving sequence")
        if self.mode == "image_to_360" and not self.images:
            raise ValueError("image_to_360 needs 1-3 conditioning images")
        if self.mode == "video_to_360" and self.video is None and self.atlas is None:
            raise ValueError("video_to_360 needs a source video or an atlas")
        if self.mode == "animate" and (not self.images or len(self.images) != 1):
            raise ValueError("animate takes exactly one conditioning image")


def embedding_stats(model: GarmentVDM, samples: list[SampleTuple]) -> tuple[torch.Tensor, torch.Tensor]:
    """Elementwise mean/std of garment encodings over a sample set, used to
    seed the atlas initialization in-distribution."""
    values = []
    with torch.no_grad():
        for s in samples:
            emb = _encode_sample_garment(model, s)
            values.append(emb.tokens[0])
    stack = torch.stack(values)
    std = stack.std(dim=0) if len(values) > 1 else torch.full_like(stack[0], 0.5)
    return stack.mean(dim=0), torch.clamp(std, min=1e-3)


def _encode_sample_garment(model: GarmentVDM, sample: SampleTuple) -> GarmentEmbedding:
    images = torch.as_tensor(np.stack(sample.garment_images), dtype=torch.float32)
    heatmaps = torch.as_tensor(np.stack(sample.garment_poses), dtype=torch.float32)
    return model.encode_garment(images.permute(0, 3, 1, 2)[None], heatmaps[None])


def _pose_features(model: GarmentVDM, pose: PoseSequence) -> PoseFeatures:
    j2d = torch.as_tensor(pose.heatmaps2d, dtype=torch.float32)[None]
    j3d = torch.as_tensor(pose.keypoints3d, dtype=torch.float32)[None]
    return model.encode_pose(j2d, j3d)


def finetune_atlas(
    model: GarmentVDM,
    video: SampleTuple,
    sched: NoiseSchedule,
    m_iterations: int = 200,
    lr: float = 1e-3,
    batch_frames: int = 8,
    seed: int = 0,
    init_stats: tuple[float, float] | None = None,
) -> AtlasState:
    """Optimize a garment embedding against one dynamic video; the model is
    frozen bit-exactly for the whole run."""
    if video.domain != "real":
        raise ValueError("atlas finetuning takes a real-domain video")
    n_frames = video.video.n_frames
    if n_frames < batch_frames:
        raise ValueError(f"video has {n_frames} frames < batch_frames={batch_frames}")

    was_training = model.training
    requires = [p.requires_grad for p in model.parameters()]
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)

    rng = torch.Generator().manual_seed(seed)
    mean, std = init_stats if init_stats is not None else (0.0, 0.5)
    shape = (model.config.n_tokens, model.config.hidden_size)
    mean = torch.as_tensor(mean, dtype=torch.float32)
    std = torch.as_tensor(std, dtype=torch.float32)
    atlas = (mean + std * torch.randn(shape, generator=rng)).detach().requires_grad_(True)
    optimizer = torch.optim.Adam([atlas], lr=lr)

    frames = torch.as_tensor(video.video.frames, dtype=torch.float32).permute(3, 0, 1, 2)[None]
    state = AtlasState(embedding=atlas, source_video_id=video.garment_id, seed=seed, lr=lr)

    for _ in range(m_iterations):
        start = int(torch.randint(0, n_frames - batch_frames + 1, (1,), generator=rng))
        window = video.driving.window(start, batch_frames)
        v_g = frames[:, :, start : start + batch_frames]
        t = torch.randint(0, sched.T, (1,), generator=rng)
        eps = torch.randn(v_g.shape, generator=rng)
        z_t = add_noise(v_g, eps, t, sched)
        pose = _pose_features(model, window)
        v_hat = model(z_t, t, GarmentEmbedding(tokens=atlas[None]), pose, branch="real")
        loss = loss_eps(eps_from_v(z_t, v_hat, t, sched), eps)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        state.losses.append(float(loss.detach()))
        state.iterations_done += 1

    for p, r in zip(model.parameters(), requires):
        p.requires_grad_(r)
    model.train(was_training)
    state.embedding = atlas.detach()
    return state


# ---- sampling-side pipelines ------------------------------------------------------


def _guided_video(
    model: GarmentVDM,
    garment: GarmentEmbedding,
    driving: PoseSequence,
    branch: str,
    sched: NoiseSchedule,
    guidance: GuidanceWeights,
    seed: int,
) -> VideoTensor:
    """Run the CFG sampling loop and unpack to a world-side video."""
    model.eval()
    n_frames = driving.n_frames
    H, W = driving.heatmaps2d.shape[-2:]
    with torch.no_grad():
        pose = _pose_features(model, driving)
        null_g, null_p = model.null_conditioning(1, n_frames)

        def model_fn(z, t, cond, group):
            g = null_g if group == "null" else cond
            p = null_p if group in ("null", "garment") else pose
            t_vec = torch.full((z.shape[0],), t, dtype=torch.long)
            v_hat = model(z, t_vec, g, p, branch=branch)
            return eps_from_v(z, v_hat, t, sched)

        rng = torch.Generator().manual_seed(seed)
        out = sample(model_fn, garment, sched, guidance, rng, n_frames, (H, W), channels=model.config.channels)
    frames = out[0].permute(1, 2, 3, 0).numpy().astype(np.float32)
    return VideoTensor(frames)


def image_to_360(
    model: GarmentVDM,
    images: list[np.ndarray],
    image_heatmaps: list[np.ndarray],
    driving: PoseSequence,
    sched: NoiseSchedule,
    guidance: GuidanceWeights = GuidanceWeights(),
    seed: int = 0,
) -> VideoTensor:
    """Static orbit views of the garment shown in 1-3 segmented images."""
    if driving.mode != "spin":
        raise ValueError("image_to_360 requires a spin driving sequence")
    imgs = torch.as_tensor(np.stack(images), dtype=torch.float32).permute(0, 3, 1, 2)[None]
    hms = torch.as_tensor(np.stack(image_heatmaps), dtype=torch.float32)[None]
    with torch.no_grad():
        garment = model.encode_garment(imgs, hms)
    return _guided_video(model, garment, driving, "spin", sched, guidance, seed)


def video_to_360(
    model: GarmentVDM,
    video: SampleTuple,
    driving: PoseSequence,
    sched: NoiseSchedule,
    guidance: GuidanceWeights = GuidanceWeights(),
    m_iterations: int = 200,
    lr: float = 1e-3,
    batch_frames: int = 8,
    seed: int = 0,
    init_stats: tuple[float, float] | None = None,
    atlas: AtlasState | None = None,
) -> tuple[VideoTensor, AtlasState]:
    """Finetune an atlas on the dynamic video (unless given one), then run
    the spin branch with the atlas in place of a garment encoding. No
    garment image is consumed at sampling time."""
    if atlas is None:
        atlas = finetune_atlas(model, video, sched, m_iterations, lr, batch_frames, seed, init_stats)
    garment = GarmentEmbedding(tokens=atlas.embedding[None])
    out = _guided_video(model, garment, driving, "spin", sched, guidance, seed)
    return out, atlas


def animate(
    model: GarmentVDM,
    image: np.ndarray,
    image_heatmap: np.ndarray,
    driving: PoseSequence,
    sched: NoiseSchedule,
    guidance: GuidanceWeights = GuidanceWeights(),
    seed: int = 0,
) -> VideoTensor:
    """Drive a single garment image with a dynamic pose sequence."""
    if driving.mode != "dynamic":
        raise ValueError("animate requires a dynamic driving sequence")
    imgs = torch.as_tensor(np.stack([image]), dtype=torch.float32).permute(0, 3, 1, 2)[None]
    hms = torch.as_tensor(np.stack([image_heatmap]), dtype=torch.float32)[None]
    with torch.no_grad():
        garment = model.encode_garment(imgs, hms)
    return _guided_video(model, garment, driving, "real", sched, guidance, seed)


def run_request(model: GarmentVDM, request: InferenceRequest, sched: NoiseSchedule, **atlas_kwargs):
    if request.mode == "image_to_360":
        return image_to_360(
            model, request.images, request.image_heatmaps, request.driving,
            sched, request.guidance, request.seed,
        )
    if request.mode == "video_to_360":
        out, _ = video_to_360(
            model, request.video, request.driving, sched, request.guidance,
            seed=request.seed, atlas=request.atlas, **atlas_kwargs,
        )
        return out
    return animate(
        model, request.images[0], request.image_heatmaps[0], request.driving,
        sched, request.guidance, request.seed,
    )


# ---- persistence -------------------------------------------------------------------


def save_atlas(state: AtlasState, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    provenance = {
        "source_video_id": state.source_video_id,
        "iterations_done": state.iterations_done,
        "seed": state.seed,
        "lr": state.lr,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(
                fh,
                embedding=state.embedding.numpy(),
                losses=np.asarray(state.losses, dtype=np.float64),
                provenance_json=np.frombuffer(json.dumps(provenance).encode(), dtype=np.uint8),
            )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_atlas(path: str | Path) -> AtlasState:
    with np.load(path) as z:
        provenance = json.loads(bytes(z["provenance_json"]))
        embedding = torch.from_numpy(z["embedding"].copy())
        losses = list(z["losses"])
    return AtlasState(
        embedding=embedding,
        source_video_id=provenance["source_video_id"],
        iterations_done=provenance["iterations_done"],
        losses=losses,
        seed=provenance["seed"],
        lr=provenance["lr"],
    )
