"""Keypoint rig, pose sequences, and heatmap rendering.

The rig has 8 keypoints (head, shoulders, hands, pelvis, hips) in scene
coordinates, z toward the viewer. Spin sequences keep the canonical
A-pose and rotate about the vertical axis; dynamic sequences articulate
arms/hips/head smoothly in the scene plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KEYPOINT_NAMES = (
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_hand",
    "r_hand",
    "pelvis",
    "l_hip",
    "r_hip",
)
N_KEYPOINTS = len(KEYPOINT_NAMES)

HEAD, L_SHOULDER, R_SHOULDER, L_HAND, R_HAND, PELVIS, L_HIP, R_HIP = range(N_KEYPOINTS)

POSE_MODES = ("dynamic", "spin")


def rest_pose() -> np.ndarray:
    """Canonical A-pose keypoints, (K, 3), z = 0 plane."""
    return np.array(
        [
            [0.00, 0.78, 0.0],   # head
            [-0.30, 0.52, 0.0],  # l_shoulder
            [0.30, 0.52, 0.0],   # r_shoulder
            [-0.52, 0.12, 0.0],  # l_hand (A-pose: down and out)
            [0.52, 0.12, 0.0],   # r_hand
            [0.00, 0.10, 0.0],   # pelvis
            [-0.14, -0.02, 0.0], # l_hip
            [0.14, -0.02, 0.0],  # r_hip
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class PoseSequence:
    """Driving poses: 3D keypoints plus image-aligned 2D heatmaps."""

    mode: str                 # "dynamic" | "spin"
    keypoints3d: np.ndarray   # (F, K, 3) scene units
    keypoints2d: np.ndarray   # (F, K, 2) normalized [0, 1]^2 image coords
    visibility: np.ndarray    # (F, K) bool
    heatmaps2d: np.ndarray    # (F, K, H, W) float32, peak 1 per visible keypoint
    azimuths: np.ndarray | None = None  # (F,) radians, spin mode only

    @property
    def n_frames(self) -> int:
        return self.keypoints3d.shape[0]

    def window(self, start: int, length: int) -> "PoseSequence":
        sl = slice(start, start + length)
        az = None if self.azimuths is None else self.azimuths[sl]
        return PoseSequence(
            self.mode,
            self.keypoints3d[sl],
            self.keypoints2d[sl],
            self.visibility[sl],
            self.heatmaps2d[sl],
            az,
        )


def project_keypoints(kp3d: np.ndarray) -> np.ndarray:
    """Orthographic projection of (..., 3) scene points to normalized [0,1]^2."""
    x = (kp3d[..., 0] + 1.0) * 0.5
    y = (1.0 - kp3d[..., 1]) * 0.5
    return np.stack([x, y], axis=-1)


def compute_pose_heatmaps(
    keypoints2d: np.ndarray,
    resolution: tuple[int, int],
    sigma: float,
    visibility: np.ndarray | None = None,
) -> np.ndarray:
    """Per-keypoint Gaussian bump heatmaps.

    keypoints2d: (K, 2) in normalized [0, 1]^2; sigma in pixels. Peak value
    is 1 before any normalization; invisible keypoints give all-zero
    channels; out-of-frame points produce truncated bumps.
    """
    H, W = resolution
    kp = np.asarray(keypoints2d, dtype=np.float64)
    K = kp.shape[0]
    if visibility is None:
        visibility = np.ones(K, dtype=bool)
    cols = np.arange(W, dtype=np.float64)
    rows = np.arange(H, dtype=np.float64)
    out = np.zeros((K, H, W), dtype=np.float32)
    for k in range(K):
        if not visibility[k]:
            continue
        # pixel (i, j) center sits at normalized ((j+0.5)/W, (i+0.5)/H)
        cx = kp[k, 0] * W - 0.5
        cy = kp[k, 1] * H - 0.5
        dx2 = (cols - cx) ** 2
        dy2 = (rows - cy) ** 2
        out[k] = np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * sigma**2)).astype(np.float32)
    return out


def _heatmap_stack(kp3d: np.ndarray, visibility: np.ndarray, resolution, sigma) -> tuple[np.ndarray, np.ndarray]:
    kp2d = project_keypoints(kp3d)
    maps = np.stack(
        [compute_pose_heatmaps(kp2d[f], resolution, sigma, visibility[f]) for f in range(kp3d.shape[0])]
    )
    return kp2d, maps


def spin_pose_sequence(
    n_frames: int,
    resolution: tuple[int, int],
    sigma: float = 1.5,
    view_indices: np.ndarray | None = None,
    n_views: int | None = None,
) -> PoseSequence:
    """A-pose orbit: articulation fixed, azimuth sweeping one full turn.

    Azimuths come from integer view indices over n_views so that an index
    offset of n_views reproduces frame 0 bit-exactly.
    """
    if view_indices is None:
        n_views = n_frames if n_views is None else n_views
        view_indices = np.arange(n_frames) * (n_views // n_frames)
    else:
        view_indices = np.asarray(view_indices)
        if n_views is None:
            raise ValueError("n_views required with explicit view_indices")
    azimuths = 2.0 * np.pi * (np.mod(view_indices, n_views) / float(n_views))
    rest = rest_pose()
    kp3d = np.stack([rotate_y(rest, a) for a in azimuths])
    vis = np.ones(kp3d.shape[:2], dtype=bool)
    kp2d, maps = _heatmap_stack(kp3d, vis, resolution, sigma)
    return PoseSequence("spin", kp3d, kp2d, vis, maps, azimuths=azimuths)


def rotate_y(points: np.ndarray, angle: float) -> np.ndarray:
    """Rotate (..., 3) points about the vertical axis."""
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def dynamic_pose_sequence(
    seed: int,
    n_frames: int,
    resolution: tuple[int, int],
    sigma: float = 1.5,
    amplitude: float = 1.0,
) -> PoseSequence:
    """Smooth random articulation: swinging arms, swaying hips, bobbing head."""
    rng = np.random.default_rng([seed, 0x0D11])
    rest = rest_pose()
    arm_amp = amplitude * rng.uniform(0.25, 0.6)
    arm_phase = rng.uniform(0.0, 2 * np.pi, size=2)
    hip_amp = amplitude * rng.uniform(0.03, 0.09)
    hip_phase = rng.uniform(0.0, 2 * np.pi)
    bob_amp = amplitude * rng.uniform(0.01, 0.04)
    sway_amp = amplitude * rng.uniform(0.02, 0.06)
    cycles = rng.uniform(0.7, 1.6)

    frames = []
    for f in range(n_frames):
        u = 2 * np.pi * cycles * f / max(n_frames, 1)
        kp = rest.copy()
        sway = sway_amp * np.sin(u + hip_phase)
        kp[:, 0] += sway
        kp[HEAD, 1] += bob_amp * np.sin(2 * u)
        for side, (sh, hand) in enumerate([(L_SHOULDER, L_HAND), (R_SHOULDER, R_HAND)]):
            ang = arm_amp * np.sin(u + arm_phase[side])
            v = rest[hand] - rest[sh]
            c, s = np.cos(ang), np.sin(ang)
            kp[hand, 0] = kp[sh, 0] + c * v[0] - s * v[1]
            kp[hand, 1] = kp[sh, 1] + s * v[0] + c * v[1]
        dx = hip_amp * np.sin(u + hip_phase)
        kp[L_HIP, 0] += dx
        kp[R_HIP, 0] += dx
        frames.append(kp)
    kp3d = np.stack(frames)
    vis = np.ones(kp3d.shape[:2], dtype=bool)
    kp2d, maps = _heatmap_stack(kp3d, vis, resolution, sigma)
    return PoseSequence("dynamic", kp3d, kp2d, vis, maps)


def static_pose_sequence(seed: int, n_frames: int, resolution, sigma: float = 1.5) -> PoseSequence:
    """Dynamic-mode sequence holding one articulated pose in every frame."""
    one = dynamic_pose_sequence(seed, 1, resolution, sigma)
    rep = lambda a: np.repeat(a, n_frames, axis=0)
    return PoseSequence(
        "dynamic",
        rep(one.keypoints3d),
        rep(one.keypoints2d),
        rep(one.visibility),
        rep(one.heatmaps2d),
    )
