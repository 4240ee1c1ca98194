"""2.5D garment rendering: static orbits and articulated animations.

Spin rendering treats the garment as a thin extruded card: under azimuth
phi and orthographic projection the horizontal axis scales by

    e(phi) = sign(cos phi) * sqrt(cos^2 phi + thickness^2 sin^2 phi)

which foreshortens toward a thickness-wide sliver at side views and
mirrors the silhouette (negative scale) for back views.

Animation warps the silhouette by skinning it to limb segments: every
output pixel is pulled back to rest coordinates through a weight-blended
inverse of the per-bone similarity transforms (rest bone -> posed bone),
then tested against the rest silhouette and textured. Occluder sprites
erase garment pixels to the sentinel color, mimicking segmentation holes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .garments import GarmentSpec, SENTINEL
from .rig import (
    HEAD,
    L_HAND,
    L_HIP,
    L_SHOULDER,
    PELVIS,
    PoseSequence,
    R_HAND,
    R_HIP,
    R_SHOULDER,
    rest_pose,
    spin_pose_sequence,
)

DOMAINS = ("real", "spin")

# bones as (start keypoint index, end point), end given by a callable on kp
_BONE_DEFS = (
    ("torso", PELVIS, lambda kp: 0.5 * (kp[L_SHOULDER] + kp[R_SHOULDER])),
    ("head", lambda kp: 0.5 * (kp[L_SHOULDER] + kp[R_SHOULDER]), lambda kp: kp[HEAD]),
    ("l_arm", L_SHOULDER, lambda kp: kp[L_HAND]),
    ("r_arm", R_SHOULDER, lambda kp: kp[R_HAND]),
    ("l_leg", lambda kp: kp[L_HIP], lambda kp: kp[L_HIP] + 4.0 * (kp[L_HIP] - kp[PELVIS])),
    ("r_leg", lambda kp: kp[R_HIP], lambda kp: kp[R_HIP] + 4.0 * (kp[R_HIP] - kp[PELVIS])),
)

_SKIN_BANDWIDTH = 0.16


@dataclass
class VideoTensor:
    """Frames (F, H, W, 3) in [-1, 1]; fps is metadata only."""

    frames: np.ndarray
    fps: int = 8

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass
class SampleTuple:
    """One training example: target video plus conditioning signals."""

    video: VideoTensor
    garment_images: list[np.ndarray]   # 1-3 segmented (H, W, 3) frames, sentinel bg
    garment_poses: list[np.ndarray]    # aligned (K, H, W) heatmaps
    driving: PoseSequence
    domain: str                        # "real" | "spin"
    garment_id: int
    masks: np.ndarray | None = None    # (F, H, W) bool garment pixels, if rendered


def pixel_grid(resolution: tuple[int, int]) -> np.ndarray:
    """Scene coordinates of pixel centers, (H, W, 2), x right / y up."""
    H, W = resolution
    xs = -1.0 + 2.0 * (np.arange(W) + 0.5) / W
    ys = 1.0 - 2.0 * (np.arange(H) + 0.5) / H
    return np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)


def _paint(g: GarmentSpec, rest_pts: np.ndarray, resolution) -> tuple[np.ndarray, np.ndarray]:
    """Texture pixels whose rest coordinates fall inside the silhouette."""
    H, W = resolution
    flat = rest_pts.reshape(-1, 2)
    inside = g.contains(flat)
    frame = np.full((H * W, 3), SENTINEL, dtype=np.float32)
    if inside.any():
        frame[inside] = g.texture_at(flat[inside]).astype(np.float32)
    return frame.reshape(H, W, 3), inside.reshape(H, W)


def spin_scale(azimuth: float, thickness: float) -> float:
    c = np.cos(azimuth)
    s = np.sin(azimuth)
    mag = np.sqrt(c * c + thickness * thickness * s * s)
    return float(mag if c >= 0 else -mag)


def render_spin_frame(g: GarmentSpec, azimuth: float, resolution) -> tuple[np.ndarray, np.ndarray]:
    grid = pixel_grid(resolution)
    e = spin_scale(azimuth, g.thickness)
    rest = np.stack([grid[..., 0] / e, grid[..., 1]], axis=-1)
    return _paint(g, rest, resolution)


def render_spin(
    g: GarmentSpec,
    n_views: int,
    resolution: tuple[int, int],
    n_frames: int | None = None,
    start_index: int = 0,
    sigma: float = 1.5,
    fps: int = 8,
) -> SampleTuple:
    """Closed 360-degree orbit of the garment in canonical A-pose.

    n_views views cover the full orbit; frames subsample them with a
    uniform stride when n_frames < n_views. View indices are taken modulo
    n_views, so an offset of one full turn reproduces frame 0 bit-exactly.
    """
    if n_views < 4:
        raise ValueError("n_views must be >= 4")
    H, W = resolution
    if H < 8 or W < 8:
        raise ValueError(f"resolution too small: {resolution}")
    n_frames = n_views if n_frames is None else n_frames
    if n_views % n_frames != 0:
        raise ValueError(f"n_frames={n_frames} must divide n_views={n_views}")
    stride = n_views // n_frames
    view_indices = (start_index + np.arange(n_frames) * stride) % n_views
    pose = spin_pose_sequence(n_frames, resolution, sigma, view_indices=view_indices, n_views=n_views)
    frames = np.empty((n_frames, H, W, 3), dtype=np.float32)
    masks = np.empty((n_frames, H, W), dtype=bool)
    for f, az in enumerate(pose.azimuths):
        frames[f], masks[f] = render_spin_frame(g, az, resolution)
    video = VideoTensor(frames, fps=fps)
    return SampleTuple(
        video=video,
        garment_images=[frames[0].copy()],
        garment_poses=[pose.heatmaps2d[0].copy()],
        driving=pose,
        domain="spin",
        garment_id=g.garment_id,
        masks=masks,
    )


def _bones(kp: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for _, start, end in _BONE_DEFS:
        a = kp[start] if isinstance(start, int) else start(kp)
        out.append((np.asarray(a[:2], dtype=np.float64), np.asarray(end(kp)[:2], dtype=np.float64)))
    return out


def _segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = max(float(ab @ ab), 1e-12)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


def warp_to_rest(points: np.ndarray, posed_kp: np.ndarray, rest_kp: np.ndarray) -> np.ndarray:
    """Pull posed-space points back to rest coordinates via blended inverse
    bone similarity transforms (complex-number formulation)."""
    posed = _bones(posed_kp)
    rest = _bones(rest_kp)
    z = points[:, 0] + 1j * points[:, 1]
    num = np.zeros(len(points), dtype=np.complex128)
    den = np.zeros(len(points), dtype=np.float64)
    for (pa, pb), (ra, rb) in zip(posed, rest):
        w = np.exp(-(_segment_distance(points, pa, pb) ** 2) / (_SKIN_BANDWIDTH**2)) + 1e-9
        pvec = complex(*(pb - pa))
        rvec = complex(*(rb - ra))
        factor = rvec / pvec if abs(pvec) > 1e-9 else 1.0 + 0j
        mapped = complex(*ra) + (z - complex(*pa)) * factor
        num += w * mapped
        den += w
    mapped = num / den
    return np.stack([mapped.real, mapped.imag], axis=-1)


def _occluders(rng: np.random.Generator, occlusion_level: float, n_frames: int, bbox) -> list[dict]:
    """Elliptical sprites (stand-ins for arms/hair) drifting over the garment."""
    if occlusion_level <= 0:
        return []
    n = 1 + int(round(2 * occlusion_level))
    (x0, y0), (x1, y1) = bbox
    sprites = []
    for _ in range(n):
        a = (0.08 + 0.30 * occlusion_level) * rng.uniform(0.6, 1.0)
        sprites.append(
            dict(
                center=np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)]),
                a=a,
                b=a * rng.uniform(0.35, 0.8),
                angle=rng.uniform(0, np.pi),
                drift=rng.uniform(-0.08, 0.08, size=2),
                wobble=rng.uniform(0.0, 0.05),
                phase=rng.uniform(0, 2 * np.pi),
            )
        )
    return sprites


def _occlusion_mask(sprites: list[dict], f: int, grid: np.ndarray) -> np.ndarray:
    H, W, _ = grid.shape
    occ = np.zeros((H, W), dtype=bool)
    pts = grid.reshape(-1, 2)
    for s in sprites:
        c = s["center"] + f * s["drift"]
        c = c + s["wobble"] * np.array([np.sin(s["phase"] + 0.9 * f), np.cos(s["phase"] + 0.7 * f)])
        ca, sa = np.cos(s["angle"]), np.sin(s["angle"])
        d = pts - c
        u = (ca * d[:, 0] + sa * d[:, 1]) / s["a"]
        v = (-sa * d[:, 0] + ca * d[:, 1]) / s["b"]
        occ |= (u * u + v * v <= 1.0).reshape(H, W)
    return occ


def render_animation(
    g: GarmentSpec,
    pose: PoseSequence,
    occlusion_level: float,
    occluder_seed: int = 0,
    fps: int = 8,
) -> SampleTuple:
    """Articulated garment video with segmentation-style occlusion holes."""
    if pose.mode != "dynamic":
        raise ValueError(f"render_animation needs a dynamic pose, got {pose.mode!r}")
    if pose.n_frames < 1:
        raise ValueError("empty pose sequence")
    if not 0.0 <= occlusion_level <= 1.0:
        raise ValueError("occlusion_level must be in [0, 1]")
    H, W = pose.heatmaps2d.shape[-2:]
    resolution = (H, W)
    grid = pixel_grid(resolution)
    flat = grid.reshape(-1, 2)
    rest_kp = rest_pose()[:, :2]

    sil = g.silhouette
    bbox = (sil.min(axis=0) - 0.05, sil.max(axis=0) + 0.05)
    rng = np.random.default_rng([occluder_seed, g.garment_id, 0x0CC1])
    sprites = _occluders(rng, occlusion_level, pose.n_frames, bbox)

    frames = np.empty((pose.n_frames, H, W, 3), dtype=np.float32)
    masks = np.empty((pose.n_frames, H, W), dtype=bool)
    for f in range(pose.n_frames):
        rest_pts = warp_to_rest(flat, pose.keypoints3d[f][:, :2], rest_kp)
        frame, mask = _paint(g, rest_pts.reshape(H, W, 2), resolution)
        if sprites:
            occ = _occlusion_mask(sprites, f, grid)
            frame[occ] = SENTINEL
            mask &= ~occ
        frames[f] = frame
        masks[f] = mask
    video = VideoTensor(frames, fps=fps)
    return SampleTuple(
        video=video,
        garment_images=[frames[0].copy()],
        garment_poses=[pose.heatmaps2d[0].copy()],
        driving=pose,
        domain="real",
        garment_id=g.garment_id,
        masks=masks,
    )
