"""Gaussian-weighted copy-paste of small target chips.

A chip is added on top of the background window, weighted by a rotated,
off-centre Gaussian and a brightness factor::

    new = background + chip * brightness * G

The background keeps weight 1.  Results are real-valued; clipping to 8 bits
happens only when an image is written (see :func:`irforge.types.to_uint8`).

Arrays are indexed ``[y, x]`` throughout, so a ``w``-wide, ``h``-tall chip is
an ``(h, w)`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

MAX_CHIP_SIDE = 5


@dataclass(frozen=True)
class TargetChip:
    """Real-valued intensity patch taken from the target library."""

    intensity: np.ndarray

    def __post_init__(self):
        arr = np.array(self.intensity, dtype=np.float64)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValueError(f"chip must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("chip intensities must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "intensity", arr)

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @property
    def height(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True)
class GaussianParams:
    """Blend parameters for a single pasted target.

    ``rho_*`` shift the Gaussian peak from the chip centre as a fraction of the
    chip size, ``sigma_*`` are spreads as a fraction of the chip size, ``theta``
    is in degrees and ``brightness`` scales the chip intensity.
    """

    rho_x: float = 0.0
    rho_y: float = 0.0
    sigma_x: float = 0.45
    sigma_y: float = 0.45
    theta: float = 0.0
    brightness: float = 1.0

    def __post_init__(self):
        for name in ("rho_x", "rho_y", "sigma_x", "sigma_y", "theta", "brightness"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("sigma_x and sigma_y must be positive")


@dataclass(frozen=True)
class ParamRanges:
    """Closed sampling intervals for :class:`GaussianParams`."""

    rho: Tuple[float, float] = (0.0, 0.2)
    sigma: Tuple[float, float] = (0.3, 0.6)
    theta: Tuple[float, float] = (-90.0, 90.0)
    brightness: Tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        for name in ("rho", "sigma", "theta", "brightness"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.sigma[0] <= 0:
            raise ValueError("sigma range must be positive")

    def contains(self, p: GaussianParams) -> bool:
        def inside(v, rng):
            return rng[0] <= v <= rng[1]

        return (
            inside(p.rho_x, self.rho) and inside(p.rho_y, self.rho)
            and inside(p.sigma_x, self.sigma) and inside(p.sigma_y, self.sigma)
            and inside(p.theta, self.theta) and inside(p.brightness, self.brightness)
        )


def rotate_coords(x, y, mu_x, mu_y, theta):
    """Rotate ``(x, y)`` about ``(mu_x, mu_y)`` by ``theta`` degrees.

    Returns the rotated offsets from the centre, not absolute positions.
    Works elementwise on arrays.
    """
    t = math.radians(theta)
    c, s = math.cos(t), math.sin(t)
    dx = np.subtract(x, mu_x)
    dy = np.subtract(y, mu_y)
    return c * dx - s * dy, s * dx + c * dy


def gaussian_center(w: int, h: int, p: GaussianParams) -> Tuple[float, float]:
    """Continuous peak location inside a ``w`` x ``h`` box."""
    return w / 2 + p.rho_x * w, h / 2 + p.rho_y * h


def gaussian_field(x, y, w: int, h: int, p: GaussianParams):
    """Evaluate the blend weight at continuous coordinates ``(x, y)``."""
    mu_x, mu_y = gaussian_center(w, h, p)
    xr, yr = rotate_coords(x, y, mu_x, mu_y, p.theta)
    sx = p.sigma_x * w
    sy = p.sigma_y * h
    return np.exp(-(xr * xr) / (2 * sx * sx) - (yr * yr) / (2 * sy * sy))


def gaussian_matrix(w: int, h: int, p: GaussianParams) -> np.ndarray:
    """Blend weights sampled at integer pixel coordinates, shape ``(h, w)``."""
    if w < 1 or h < 1:
        raise ValueError(f"matrix size must be at least 1x1, got {w}x{h}")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return gaussian_field(xs, ys, w, h, p)


def resize_chip(chip: TargetChip, new_w: int, new_h: int) -> TargetChip:
    """Bilinear resample with half-pixel centres and edge clamping."""
    if not (1 <= new_w <= MAX_CHIP_SIDE and 1 <= new_h <= MAX_CHIP_SIDE):
        raise ValueError(
            f"chip size must be within 1..{MAX_CHIP_SIDE} on each side, got {new_w}x{new_h}"
        )
    src = chip.intensity
    h, w = src.shape
    if (w, h) == (new_w, new_h):
        return chip

    def axis(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(new_h, h)
    x0, x1, fx = axis(new_w, w)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    # Convex weights can still overshoot by an ulp.
    return TargetChip(np.clip(out, src.min(), src.max()))


def paste_target(window, chip: TargetChip, p: GaussianParams) -> np.ndarray:
    """Blend ``chip`` onto ``window`` and return the unclipped result."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != chip.intensity.shape:
        raise ValueError(
            f"window shape {window.shape} does not match chip shape {chip.intensity.shape}"
        )
    return window + added_intensity(chip, p)


def added_intensity(chip: TargetChip, p: GaussianParams) -> np.ndarray:
    """The additive term ``chip * brightness * G``."""
    g = gaussian_matrix(chip.width, chip.height, p)
    return chip.intensity * p.brightness * g


def sample_params(rng: np.random.Generator, ranges: ParamRanges = ParamRanges()) -> GaussianParams:
    """Draw each field uniformly from its interval."""
    draws = rng.random(6)

    def lerp(u, interval):
        lo, hi = interval
        return lo + (hi - lo) * float(u)

    return GaussianParams(
        rho_x=lerp(draws[0], ranges.rho),
        rho_y=lerp(draws[1], ranges.rho),
        sigma_x=lerp(draws[2], ranges.sigma),
        sigma_y=lerp(draws[3], ranges.sigma),
        theta=lerp(draws[4], ranges.theta),
        brightness=lerp(draws[5], ranges.brightness),
    )
