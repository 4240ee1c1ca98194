"""Discrete-time diffusion machinery.

Forward process: z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps with a
linear beta schedule. The network predicts v = sqrt(abar) eps -
sqrt(1 - abar) x0; conversions between eps / v / x0 are exact algebra.
Sampling is ancestral DDPM with dual classifier-free guidance over the
conditioning groups (none, garment, garment+pose).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray        # (T,) float64
    alpha: np.ndarray       # 1 - beta
    alpha_bar: np.ndarray   # cumprod(alpha)

    def to_config(self) -> dict:
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


@dataclass(frozen=True)
class GuidanceWeights:
    w_null: float = 1.0
    w_garment: float = 5.0
    w_pose: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "GuidanceWeights":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"guidance must be three comma-separated weights, got {text!r}")
        return cls(*parts)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w_null, self.w_garment, self.w_pose)


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def desk_schedule(T: int = 64) -> NoiseSchedule:
    """Short schedule with endpoints rescaled by 1000/T so the terminal
    noise level matches the 1000-step default; endpoints stay below 1."""
    scale = 1000.0 / T
    return make_schedule(T, min(1e-4 * scale, 0.05), min(0.02 * scale, 0.8))


def _coeffs(sched: NoiseSchedule, t, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """sqrt(abar_t) and sqrt(1-abar_t), broadcast against `like`."""
    abar = torch.as_tensor(sched.alpha_bar, device=like.device)
    if isinstance(t, int):
        a = abar[t]
    else:
        t = torch.as_tensor(t, device=like.device, dtype=torch.long)
        a = abar[t].reshape(t.shape + (1,) * (like.ndim - t.ndim))
    a = a.to(like.dtype)
    return torch.sqrt(a), torch.sqrt(1.0 - a)


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def add_noise(x0: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _check_shapes(x0, eps)
    sa, sb = _coeffs(sched, t, x0)
    return sa * x0 + sb * eps


def v_from(x0: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _check_shapes(x0, eps)
    sa, sb = _coeffs(sched, t, x0)
    return sa * eps - sb * x0


def eps_from_v(z_t: torch.Tensor, v: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _check_shapes(z_t, v)
    sa, sb = _coeffs(sched, t, z_t)
    return sa * v + sb * z_t


def x0_from_eps(z_t: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _check_shapes(z_t, eps)
    sa, sb = _coeffs(sched, t, z_t)
    return (z_t - sb * eps) / sa


def x0_from_v(z_t: torch.Tensor, v: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _check_shapes(z_t, v)
    sa, sb = _coeffs(sched, t, z_t)
    return sa * z_t - sb * v


def loss_eps(eps_hat: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    _check_shapes(eps_hat, eps)
    return torch.mean((eps_hat - eps) ** 2)


def cfg_combine(
    eps_null: torch.Tensor,
    eps_garment: torch.Tensor,
    eps_full: torch.Tensor,
    w: GuidanceWeights,
) -> torch.Tensor:
    """Nested dual guidance: null -> +garment -> +pose."""
    _check_shapes(eps_null, eps_garment)
    _check_shapes(eps_garment, eps_full)
    return (
        w.w_null * eps_null
        + w.w_garment * (eps_garment - eps_null)
        + w.w_pose * (eps_full - eps_garment)
    )


def ddpm_step(
    z_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """One ancestral posterior step; deterministic at t=0."""
    if not 0 <= t < sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T})")
    beta_t = float(sched.beta[t])
    alpha_t = float(sched.alpha[t])
    abar_t = float(sched.alpha_bar[t])
    mean = (z_t - beta_t / math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(alpha_t)
    if t == 0:
        return mean
    abar_prev = float(sched.alpha_bar[t - 1])
    var = beta_t * (1.0 - abar_prev) / (1.0 - abar_t)
    noise = torch.randn(z_t.shape, generator=rng, device=z_t.device, dtype=z_t.dtype)
    return mean + math.sqrt(var) * noise


def sample(
    model_fn,
    cond,
    sched: NoiseSchedule,
    w: GuidanceWeights,
    rng: torch.Generator,
    n_frames: int,
    resolution: tuple[int, int],
    channels: int = 3,
    device: str = "cpu",
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Full reverse chain from pure noise.

    model_fn(z, t, cond, group) must return an eps estimate for group in
    {"null", "garment", "full"}; per step the three are combined with
    cfg_combine before the posterior update. Returns (1, C, F, H, W)
    clamped to [-1, 1].
    """
    H, W = resolution
    z = torch.randn((1, channels, n_frames, H, W), generator=rng, device=device, dtype=dtype)
    for t in reversed(range(sched.T)):
        eps_null = model_fn(z, t, cond, "null")
        eps_garment = model_fn(z, t, cond, "garment")
        eps_full = model_fn(z, t, cond, "full")
        eps_hat = cfg_combine(eps_null, eps_garment, eps_full, w)
        z = ddpm_step(z, eps_hat, t, sched, rng)
    return torch.clamp(z, -1.0, 1.0)
