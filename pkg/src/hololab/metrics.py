"""Evaluation metrics: exact windowed SSIM, PSNR, a seeded random-projection
Frechet distance, and an orbit-smoothness score.

The Frechet proxy flattens images, projects them through a FIXED seeded
random linear map to a low dimension, fits a Gaussian per set, and applies
the standard trace/sqrtm formula. Only its ordering is meaningful; it is
never compared against published feature-space numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.ndimage import convolve1d

from .world.render import VideoTensor

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


@dataclass
class MetricReport:
    ssim: float
    psnr: float
    frechet_proxy: float
    orbit_consistency: float
    n_samples: int
    ssim_to_input: float | None = None

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(asdict(self), indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable windowed mean over valid (fully inside) positions."""
    half = len(window) // 2
    out = convolve1d(img, window, axis=0, mode="constant")
    out = convolve1d(out, window, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _remap(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float64) + 1.0) * 0.5


def ssim(a: np.ndarray, b: np.ndarray, remap: bool = True) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Inputs are (H, W) or (H, W, C) in [-1, 1]; they are remapped to [0, 1]
    (data range 1) before the standard stabilized formula. Channels and
    window positions are averaged.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if remap:
        a, b = _remap(a), _remap(b)
    else:
        a = a.astype(np.float64)
        b = b.astype(np.float64)
    c1 = _K1**2
    c2 = _K2**2
    window = _gaussian_window()
    values = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _filter_valid(x, window)
        mu_y = _filter_valid(y, window)
        xx = _filter_valid(x * x, window) - mu_x**2
        yy = _filter_valid(y * y, window) - mu_y**2
        xy = _filter_valid(x * y, window) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def ssim_video(a: VideoTensor | np.ndarray, b: VideoTensor | np.ndarray) -> float:
    """Mean SSIM over aligned frames."""
    fa = a.frames if isinstance(a, VideoTensor) else np.asarray(a)
    fb = b.frames if isinstance(b, VideoTensor) else np.asarray(b)
    if fa.shape != fb.shape:
        raise ValueError(f"shape mismatch {fa.shape} vs {fb.shape}")
    return float(np.mean([ssim(x, y) for x, y in zip(fa, fb)]))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] remap (inf if equal)."""
    a, b = _remap(a), _remap(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def _project(images: np.ndarray, proj_seed: int, dim: int) -> np.ndarray:
    flat = images.reshape(len(images), -1).astype(np.float64)
    rng = np.random.default_rng(proj_seed)
    proj = rng.standard_normal((flat.shape[1], dim)) / np.sqrt(flat.shape[1])
    return flat @ proj


def frechet_proxy(set_a: np.ndarray, set_b: np.ndarray, proj_seed: int = 0, dim: int = 64) -> float:
    """Frechet distance between Gaussian fits of randomly projected image sets."""
    set_a = np.asarray(set_a)
    set_b = np.asarray(set_b)
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValueError("need at least 2 samples per set")
    xa = _project(set_a, proj_seed, dim)
    xb = _project(set_b, proj_seed, dim)
    mu_a, mu_b = xa.mean(axis=0), xb.mean(axis=0)
    cov_a = np.cov(xa, rowvar=False) + 1e-6 * np.eye(dim)
    cov_b = np.cov(xb, rowvar=False) + 1e-6 * np.eye(dim)
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean)
    return float(max(value, 0.0))


def orbit_consistency(video: VideoTensor | np.ndarray) -> float:
    """1 - normalized mean |second temporal difference|; 1.0 for a static
    clip, lower for flicker; invariant to global brightness offsets."""
    frames = video.frames if isinstance(video, VideoTensor) else np.asarray(video)
    if frames.shape[0] < 3:
        raise ValueError("need at least 3 frames")
    second = frames[2:] - 2.0 * frames[1:-1] + frames[:-2]
    # max |second difference| for values in [-1, 1] is 4
    return float(1.0 - np.mean(np.abs(second)) / 4.0)


def evaluate_suite(
    outputs: list[VideoTensor],
    references: list[VideoTensor],
    inputs: list[np.ndarray] | None = None,
    proj_seed: int = 0,
    report_path: str | Path | None = None,
) -> MetricReport:
    """Aggregate all metrics over paired output/reference videos.

    inputs, when given, are the conditioning views matching output frame 0
    (for the SSIM-to-input-view score)."""
    if not outputs:
        raise ValueError("empty evaluation set")
    if len(outputs) != len(references):
        raise ValueError("outputs and references must pair up")
    ssims = [ssim_video(o, r) for o, r in zip(outputs, references)]
    psnrs = [np.mean([psnr(fo, fr) for fo, fr in zip(o.frames, r.frames)]) for o, r in zip(outputs, references)]
    out_frames = np.concatenate([o.frames for o in outputs])
    ref_frames = np.concatenate([r.frames for r in references])
    fre = frechet_proxy(out_frames, ref_frames, proj_seed)
    orbits = [orbit_consistency(o) for o in outputs]
    ssim_in = None
    if inputs is not None:
        ssim_in = float(np.mean([ssim(img, o.frames[0]) for img, o in zip(inputs, outputs)]))
    report = MetricReport(
        ssim=float(np.mean(ssims)),
        psnr=float(np.mean(psnrs)),
        frechet_proxy=fre,
        orbit_consistency=float(np.mean(orbits)),
        n_samples=len(outputs),
        ssim_to_input=ssim_in,
    )
    if report_path is not None:
        report.to_json(report_path)
    return report
