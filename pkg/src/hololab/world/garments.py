"""Procedural garments: silhouette polygons plus deterministic texture fields.

A garment is a simple closed polygon in a normalized scene square
([-1, 1] horizontally and vertically, y up) together with a procedural
color field evaluated on rest coordinates. The category fixes which
vertical bands the silhouette occupies:

    torso band  y in [ 0.05, 0.55]
    leg band    y in [-0.85, 0.05]

tops cover the torso band, pants the leg band, dresses both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as MplPath

CATEGORIES = ("top", "dress", "pants")

SENTINEL = -1.0

TORSO_BAND = (0.05, 0.55)
LEG_BAND = (-0.85, 0.05)

_TEXTURE_FAMILIES = ("stripes", "checkers", "blobs")


@dataclass(frozen=True)
class GarmentSpec:
    """One procedural garment identity."""

    garment_id: int
    category: str
    silhouette: np.ndarray          # (N, 2) closed simple polygon, scene coords
    thickness: float                # (0, 0.3], pseudo-depth for spin foreshortening
    texture_family: str
    texture_params: dict = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_path", MplPath(self.silhouette))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized point-in-silhouette test for (M, 2) rest coordinates."""
        return self._path.contains_points(points)

    def texture_at(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the color field at (M, 2) rest coordinates -> (M, 3) in [-0.85, 0.95]."""
        return _texture_field(self.texture_family, self.texture_params, points)


def make_garment(seed: int, category: str) -> GarmentSpec:
    """Deterministically build a garment from (seed, category)."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}, expected one of {CATEGORIES}")
    rng = np.random.default_rng([seed, CATEGORIES.index(category), 0x6A12])
    silhouette = _make_silhouette(category, rng)
    thickness = float(rng.uniform(0.08, 0.3))
    family = _TEXTURE_FAMILIES[int(rng.integers(len(_TEXTURE_FAMILIES)))]
    params = _make_texture_params(family, rng)
    return GarmentSpec(
        garment_id=seed,
        category=category,
        silhouette=silhouette,
        thickness=thickness,
        texture_family=family,
        texture_params=params,
    )


def _make_silhouette(category: str, rng: np.random.Generator) -> np.ndarray:
    torso_lo, torso_hi = TORSO_BAND
    leg_lo, leg_hi = LEG_BAND
    if category == "top":
        hem_y = torso_lo + rng.uniform(0.0, 0.04)
        return _bodice(rng, hem_y=hem_y, shoulder_y=torso_hi, hem_flare=rng.uniform(-0.04, 0.06))
    if category == "dress":
        hem_y = leg_lo + rng.uniform(0.0, 0.1)
        return _bodice(rng, hem_y=hem_y, shoulder_y=torso_hi, hem_flare=rng.uniform(0.08, 0.22))
    # pants
    waist_y = leg_hi + rng.uniform(0.0, 0.03)
    bottom_y = leg_lo + rng.uniform(0.0, 0.06)
    crotch_y = waist_y - rng.uniform(0.18, 0.26)
    w_waist = rng.uniform(0.18, 0.24)
    leg_flare = rng.uniform(-0.02, 0.06)
    gap = rng.uniform(0.03, 0.06)
    pts = [
        (-w_waist, waist_y),
        (-w_waist - leg_flare, bottom_y),
        (-gap, bottom_y),
        (0.0, crotch_y),
        (gap, bottom_y),
        (w_waist + leg_flare, bottom_y),
        (w_waist, waist_y),
    ]
    return np.asarray(pts, dtype=np.float64)


def _bodice(rng: np.random.Generator, hem_y: float, shoulder_y: float, hem_flare: float) -> np.ndarray:
    """Torso shape with short sleeve stubs, shared by tops and dresses."""
    w_sh = rng.uniform(0.26, 0.34)
    w_hem = w_sh + hem_flare
    w_neck = rng.uniform(0.10, 0.16)
    neck_y = shoulder_y + rng.uniform(0.02, 0.05)
    # sleeve stub pointing down-out at roughly the A-pose arm angle
    sl_len = rng.uniform(0.08, 0.16)
    sl_drop = rng.uniform(0.10, 0.16)
    sl_width = rng.uniform(0.09, 0.13)
    waist_y = 0.5 * (shoulder_y + hem_y)
    w_waist = 0.5 * (w_sh + w_hem) * rng.uniform(0.88, 1.0)
    pts = [
        (-w_neck, neck_y),
        (-w_sh, shoulder_y),
        (-w_sh - sl_len, shoulder_y - sl_drop),
        (-w_sh - sl_len + sl_width * 0.4, shoulder_y - sl_drop - sl_width),
        (-w_sh + 0.02, shoulder_y - sl_width - 0.04),
        (-w_waist, waist_y),
        (-w_hem, hem_y),
        (w_hem, hem_y),
        (w_waist, waist_y),
        (w_sh - 0.02, shoulder_y - sl_width - 0.04),
        (w_sh + sl_len - sl_width * 0.4, shoulder_y - sl_drop - sl_width),
        (w_sh + sl_len, shoulder_y - sl_drop),
        (w_sh, shoulder_y),
        (w_neck, neck_y),
    ]
    return np.asarray(pts, dtype=np.float64)


def _make_texture_params(family: str, rng: np.random.Generator) -> dict:
    c0 = rng.uniform(-0.7, 0.9, size=3)
    c1 = rng.uniform(-0.7, 0.9, size=3)
    # keep the two colors apart so patterns stay visible after quantization
    while np.abs(c0 - c1).max() < 0.4:
        c1 = rng.uniform(-0.7, 0.9, size=3)
    params = {"c0": c0, "c1": c1}
    if family == "stripes":
        angle = rng.uniform(0.0, np.pi)
        params.update(
            direction=np.array([np.cos(angle), np.sin(angle)]),
            period=float(rng.uniform(0.12, 0.4)),
            phase=float(rng.uniform(0.0, 1.0)),
        )
    elif family == "checkers":
        params.update(
            scale=float(rng.uniform(0.1, 0.3)),
            phase=rng.uniform(0.0, 1.0, size=2),
        )
    else:  # blobs
        n = int(rng.integers(3, 7))
        params.update(
            centers=rng.uniform(-0.6, 0.6, size=(n, 2)),
            radii=rng.uniform(0.1, 0.3, size=n),
            colors=rng.uniform(-0.7, 0.9, size=(n, 3)),
        )
    return params


def _texture_field(family: str, p: dict, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if family == "stripes":
        s = pts @ p["direction"] / p["period"] + p["phase"]
        which = np.floor(s).astype(np.int64) % 2
        out = np.where(which[:, None] == 0, p["c0"], p["c1"])
    elif family == "checkers":
        ij = np.floor(pts / p["scale"] + p["phase"]).astype(np.int64)
        which = (ij[:, 0] + ij[:, 1]) % 2
        out = np.where(which[:, None] == 0, p["c0"], p["c1"])
    else:
        out = np.tile(p["c0"], (len(pts), 1))
        for center, radius, color in zip(p["centers"], p["radii"], p["colors"]):
            w = np.exp(-np.sum((pts - center) ** 2, axis=1) / (2 * radius**2))
            out = out * (1 - w[:, None]) + color * w[:, None]
    # stay clear of the sentinel (-1) so garment pixels never alias background
    return np.clip(out, -0.85, 0.95)
