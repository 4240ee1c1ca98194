"""Dataset generation, persistence, and batch sampling.

A generated dataset directory looks like:

    manifest.json
    g0000/spin/frame_000.png ... mask_000.png ... heatmaps.arr kp3d.arr kp2d.arr
    g0000/anim0/... anim1/...

The manifest records garment seeds/categories, render configs, and the
per-render file paths; everything is regenerable from (seed, config).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import arrayio
from .garments import SENTINEL, make_garment
from .render import SampleTuple, VideoTensor, render_animation, render_spin
from .rig import PoseSequence, dynamic_pose_sequence

MANIFEST_NAME = "manifest.json"
CACHE_ENV = "HOLOLAB_CACHE"


def cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "hololab"))


def _render_dir_name(garment_index: int, render: str) -> str:
    return f"g{garment_index:04d}/{render}"


def _persist_render(root: Path, rel: str, sample: SampleTuple) -> dict:
    out = root / rel
    out.mkdir(parents=True, exist_ok=True)
    frames = sample.video.frames
    for f in range(frames.shape[0]):
        arrayio.save_frame_png(out / f"frame_{f:03d}.png", frames[f])
        arrayio.save_mask_png(out / f"mask_{f:03d}.png", sample.masks[f])
    arrayio.write_array(out / "heatmaps.arr", sample.driving.heatmaps2d)
    arrayio.write_array(out / "kp3d.arr", sample.driving.keypoints3d)
    arrayio.write_array(out / "kp2d.arr", sample.driving.keypoints2d)
    if sample.driving.azimuths is not None:
        arrayio.write_array(out / "azimuths.arr", sample.driving.azimuths)
    return {"dir": rel, "n_frames": int(frames.shape[0]), "mode": sample.driving.mode}


def generate_dataset(
    out_dir: str | Path,
    n_garments: int,
    resolution: tuple[int, int] = (32, 24),
    n_frames: int = 8,
    n_views: int = 32,
    occlusion_level: float = 0.5,
    n_animations: int = 2,
    seed: int = 0,
    sigma: float = 1.5,
) -> Path:
    """Render all garments to disk and write the manifest. Returns its path."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0xDA7A])
    garments = []
    categories = ("top", "dress", "pants")
    for i in range(n_garments):
        g_seed = seed * 100_003 + i
        category = categories[i % len(categories)]
        g = make_garment(g_seed, category)
        spin = render_spin(g, n_views, resolution, sigma=sigma)
        spin_entry = _persist_render(root, _render_dir_name(i, "spin"), spin)
        spin_entry["n_views"] = n_views
        anims = []
        for a in range(n_animations):
            pose_seed = int(rng.integers(1, 2**31))
            pose = dynamic_pose_sequence(pose_seed, n_frames, resolution, sigma)
            anim = render_animation(g, pose, occlusion_level, occluder_seed=pose_seed)
            entry = _persist_render(root, _render_dir_name(i, f"anim{a}"), anim)
            entry["pose_seed"] = pose_seed
            anims.append(entry)
        garments.append(
            {
                "index": i,
                "seed": g_seed,
                "category": category,
                "thickness": g.thickness,
                "spin": spin_entry,
                "animations": anims,
            }
        )
    manifest = {
        "version": 1,
        "seed": seed,
        "resolution": list(resolution),
        "n_frames": n_frames,
        "n_views": n_views,
        "occlusion_level": occlusion_level,
        "sigma": sigma,
        "garments": garments,
    }
    path = root / MANIFEST_NAME
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _load_render(root: Path, entry: dict) -> tuple[VideoTensor, PoseSequence, np.ndarray]:
    d = root / entry["dir"]
    n = entry["n_frames"]
    frames, masks = [], []
    for f in range(n):
        frame = arrayio.load_frame_png(d / f"frame_{f:03d}.png")
        mask = arrayio.load_mask_png(d / f"mask_{f:03d}.png")
        frame[~mask] = SENTINEL
        frames.append(frame)
        masks.append(mask)
    heatmaps = arrayio.read_array(d / "heatmaps.arr")
    kp3d = arrayio.read_array(d / "kp3d.arr")
    kp2d = arrayio.read_array(d / "kp2d.arr")
    az_path = d / "azimuths.arr"
    azimuths = arrayio.read_array(az_path) if az_path.exists() else None
    vis = np.ones(kp3d.shape[:2], dtype=bool)
    pose = PoseSequence(entry["mode"], kp3d, kp2d, vis, heatmaps, azimuths)
    return VideoTensor(np.stack(frames)), pose, np.stack(masks)


class Dataset:
    """Manifest-backed sample source with a small in-memory render cache."""

    def __init__(self, manifest_path: str | Path):
        self.root = Path(manifest_path).parent
        with open(manifest_path) as fh:
            self.manifest = json.load(fh)
        self._cache: dict[str, tuple[VideoTensor, PoseSequence, np.ndarray]] = {}

    @property
    def n_garments(self) -> int:
        return len(self.manifest["garments"])

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.manifest["resolution"])

    def garment_entry(self, index: int) -> dict:
        return self.manifest["garments"][index]

    def load(self, entry: dict):
        key = entry["dir"]
        if key not in self._cache:
            self._cache[key] = _load_render(self.root, entry)
        return self._cache[key]

    def spin_tuple(self, index: int, n_frames: int | None = None, start_index: int = 0) -> SampleTuple:
        """Ground-truth orbit for one garment, stride-subsampled to n_frames."""
        entry = self.garment_entry(index)
        video, pose, masks = self.load(entry["spin"])
        n_views = entry["spin"]["n_views"]
        n_frames = n_frames or self.manifest["n_frames"]
        stride = n_views // n_frames
        idx = (start_index + np.arange(n_frames) * stride) % n_views
        sub_pose = PoseSequence(
            pose.mode,
            pose.keypoints3d[idx],
            pose.keypoints2d[idx],
            pose.visibility[idx],
            pose.heatmaps2d[idx],
            pose.azimuths[idx] if pose.azimuths is not None else None,
        )
        return SampleTuple(
            video=VideoTensor(video.frames[idx]),
            garment_images=[video.frames[0].copy()],
            garment_poses=[pose.heatmaps2d[0].copy()],
            driving=sub_pose,
            domain="spin",
            garment_id=entry["seed"],
            masks=masks[idx],
        )

    def animation_tuple(self, index: int, which: int = 0) -> SampleTuple:
        entry = self.garment_entry(index)
        anim = entry["animations"][which]
        video, pose, masks = self.load(anim)
        return SampleTuple(
            video=video,
            garment_images=[video.frames[0].copy()],
            garment_poses=[pose.heatmaps2d[0].copy()],
            driving=pose,
            domain="real",
            garment_id=entry["seed"],
            masks=masks,
        )

    def conditioning_views(self, index: int, domain: str, n_images: int, rng: np.random.Generator, exclude_anim: int | None = None):
        """Pick 1-3 conditioning frames from a decorrelated render of the garment."""
        entry = self.garment_entry(index)
        if domain == "spin":
            video, pose, _ = self.load(entry["spin"])
            frame_ids = rng.choice(video.n_frames, size=n_images, replace=False)
        else:
            choices = [a for a in range(len(entry["animations"])) if a != exclude_anim]
            which = int(rng.choice(choices)) if choices else (exclude_anim or 0)
            video, pose, _ = self.load(entry["animations"][which])
            frame_ids = rng.choice(video.n_frames, size=min(n_images, video.n_frames), replace=False)
        images = [video.frames[f].copy() for f in frame_ids]
        heatmaps = [pose.heatmaps2d[f].copy() for f in frame_ids]
        return images, heatmaps


def sample_batch(dataset: Dataset, domain: str, batch_size: int, rng: np.random.Generator) -> list[SampleTuple]:
    """Draw batch_size single-domain tuples with randomized conditioning views."""
    if domain not in ("real", "spin"):
        raise ValueError(f"unknown domain {domain!r}")
    if dataset.n_garments == 0:
        raise ValueError("empty manifest")
    out = []
    for _ in range(batch_size):
        index = int(rng.integers(dataset.n_garments))
        if domain == "spin":
            n_views = dataset.garment_entry(index)["spin"]["n_views"]
            sample = dataset.spin_tuple(index, start_index=int(rng.integers(n_views)))
            exclude = None
        else:
            which = int(rng.integers(len(dataset.garment_entry(index)["animations"])))
            sample = dataset.animation_tuple(index, which)
            exclude = which
        n_images = int(rng.integers(1, 4))
        images, heatmaps = dataset.conditioning_views(index, domain, n_images, rng, exclude_anim=exclude)
        sample.garment_images = images
        sample.garment_poses = heatmaps
        out.append(sample)
    return out
