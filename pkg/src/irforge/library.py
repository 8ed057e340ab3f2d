"""Target-chip libraries on disk, plus small synthetic scenes for demos and tests."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .gauss import TargetChip
from .types import GrayImage, SkyMask, _atomic_write_bytes, _write_png, to_uint8

MAX_LIBRARY_CHIP = 32


def load_library(directory) -> List[TargetChip]:
    """Read the chips listed in ``library.json`` under *directory*."""
    d = Path(directory)
    index = d / "library.json"
    with open(index) as fh:
        meta = json.load(fh)
    names = meta.get("chips") if isinstance(meta, dict) else meta
    if not isinstance(names, list) or not names:
        raise ValueError(f"{index}: expected a non-empty 'chips' list")
    chips = []
    for name in names:
        path = d / name
        with Image.open(path) as im:
            arr = np.array(im.convert("L"), dtype=np.float64)
        if arr.shape[0] > MAX_LIBRARY_CHIP or arr.shape[1] > MAX_LIBRARY_CHIP:
            raise ValueError(
                f"{path}: chip is {arr.shape[1]}x{arr.shape[0]}, "
                f"larger than {MAX_LIBRARY_CHIP}x{MAX_LIBRARY_CHIP}"
            )
        chips.append(TargetChip(arr))
    return chips


def save_library(chips: Sequence[TargetChip], directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for i, chip in enumerate(chips):
        name = f"chip_{i:04d}.png"
        _write_png(to_uint8(chip.intensity), d / name)
        names.append(name)
    _atomic_write_bytes(d / "library.json", json.dumps({"chips": names}, indent=2).encode())


def toy_library(rng: np.random.Generator, n: int = 32) -> List[TargetChip]:
    """Blob-shaped chips between 3x3 and 9x9 with peaks in [60, 200]."""
    chips = []
    for _ in range(n):
        w, h = (int(v) for v in rng.integers(3, 10, size=2))
        peak = rng.uniform(60, 200)
        ys, xs = np.mgrid[0:h, 0:w]
        cx, cy = (w - 1) / 2, (h - 1) / 2
        r2 = ((xs - cx) / (w / 2.5)) ** 2 + ((ys - cy) / (h / 2.5)) ** 2
        chips.append(TargetChip(np.round(peak * np.exp(-r2))))
    return chips


def toy_scene(rng: np.random.Generator, width: int = 512, height: int = 512) -> Tuple[GrayImage, SkyMask]:
    """A smooth sky over a textured ground with a wavy horizon.

    The horizon sits between 35% and 75% of the height, so every scene has a
    large sky band and a large non-sky band.
    """
    base_line = rng.uniform(0.35, 0.75) * height
    xs = np.arange(width)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    amp = rng.uniform(0.02, 0.08) * height
    horizon = base_line + amp * np.sin(xs / width * 2 * np.pi * 1.5 + phase[0]) \
        + 0.5 * amp * np.sin(xs / width * 2 * np.pi * 4.0 + phase[1])
    ys = np.arange(height)[:, None]
    sky = ys < horizon[None, :]
    sky_level = rng.uniform(40, 120)
    gradient = sky_level + 30 * (ys / height)
    ground = rng.uniform(60, 160) + 25 * rng.standard_normal((height, width))
    pixels = np.where(sky, gradient + 2 * rng.standard_normal((height, width)), ground)
    return GrayImage(to_uint8(pixels)), SkyMask(sky)


def write_toy_inputs(root, n_images: int, seed: int = 0, size: int = 512, n_chips: int = 32) -> dict:
    """Populate ``base/``, ``masks/`` and ``library/`` under *root* for a demo run.

    Returns the directory paths as a dict suitable for a generation config.
    """
    from .rng import derive_stream

    root = Path(root)
    rng = derive_stream(seed, 0)
    save_library(toy_library(rng, n_chips), root / "library")
    for i in range(n_images):
        img, mask = toy_scene(derive_stream(seed, i + 1), size, size)
        img.save(root / "base" / f"scene_{i:05d}.png")
        mask.save(root / "masks" / f"scene_{i:05d}.png")
    return {
        "base_dir": str(root / "base"),
        "mask_dir": str(root / "masks"),
        "library_dir": str(root / "library"),
    }
