"""Dataset generation: configuration, per-image composition and the output tree.

Output layout under ``out_dir``::

    images/NNNNN.png
    masks_sky/NNNNN.png
    annotations/NNNNN/boxes.txt
    annotations/NNNNN/points.csv
    annotations/NNNNN/mask.png
    manifest.json
    config.json          # effective configuration, re-runnable as-is

``NNNNN`` is the index of the base image in sorted file-name order; the same
index is the random stream id, so each image is reproducible on its own.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Union

from .compose import ClusterPackingError, ClusterSpec, SkyTooSmall, compose_scene
from .gauss import ParamRanges
from .library import load_library
from .rng import derive_stream
from .types import GrayImage, SkyMask, _atomic_write_bytes

logger = logging.getLogger(__name__)

SPLIT_STREAM = (1 << 64) - 1
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


class ConfigError(ValueError):
    """Invalid generation configuration."""


@dataclass
class GenerationConfig:
    seed: int = 0
    base_dir: str = "base"
    mask_dir: str = "masks"
    library_dir: str = "library"
    out_dir: str = "out"
    # Split name -> fraction of images, or an explicit list of base-image stems.
    splits: Dict[str, Union[float, List[str]]] = field(
        default_factory=lambda: {"train": 0.7, "val": 0.1, "test": 0.2}
    )
    region_size: int = 20
    clusters_min: int = 1
    clusters_max: int = 3
    targets_min: int = 8
    targets_max: int = 12
    chip_min: int = 1
    chip_max: int = 5
    spacing_min: int = 1
    spacing_max: int = 2
    rho_range: List[float] = field(default_factory=lambda: [0.0, 0.2])
    sigma_range: List[float] = field(default_factory=lambda: [0.3, 0.6])
    theta_range: List[float] = field(default_factory=lambda: [-90.0, 90.0])
    lambda_range: List[float] = field(default_factory=lambda: [0.5, 1.0])
    sky_only: bool = True
    mask_threshold: float = 5.0

    def __post_init__(self):
        try:
            self.cluster_spec()
            self.param_ranges()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(self.splits, dict) or not self.splits:
            raise ConfigError("splits must be a non-empty object")
        fractions = [v for v in self.splits.values() if not isinstance(v, list)]
        if any(not isinstance(v, (int, float)) or v < 0 for v in fractions):
            raise ConfigError("split fractions must be non-negative numbers")
        if fractions and len(fractions) != len(self.splits):
            raise ConfigError("splits must be all fractions or all name lists")

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "GenerationConfig":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def cluster_spec(self) -> ClusterSpec:
        return ClusterSpec(
            self.region_size, self.clusters_min, self.clusters_max,
            self.targets_min, self.targets_max, self.chip_min, self.chip_max,
            self.spacing_min, self.spacing_max,
        )

    def param_ranges(self) -> ParamRanges:
        return ParamRanges(
            tuple(self.rho_range), tuple(self.sigma_range),
            tuple(self.theta_range), tuple(self.lambda_range),
        )


def _list_images(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _assign_splits(stems: List[str], cfg: GenerationConfig) -> List[str]:
    names = list(cfg.splits)
    if isinstance(next(iter(cfg.splits.values())), list):
        lookup = {stem: name for name in names for stem in cfg.splits[name]}
        return [lookup.get(stem, "unassigned") for stem in stems]
    n = len(stems)
    total = sum(cfg.splits.values()) or 1.0
    order = derive_stream(cfg.seed, SPLIT_STREAM).permutation(n)
    labels = [names[-1]] * n
    start = 0
    for name in names[:-1]:
        count = int(n * cfg.splits[name] / total)
        for i in order[start:start + count]:
            labels[int(i)] = name
        start += count
    return labels


def _render_one(index: int, base_path: Path, mask_path: Path, library, cfg: GenerationConfig,
                out: Path) -> Optional[dict]:
    try:
        base = GrayImage.load(base_path)
        mask = SkyMask.load(mask_path)
    except OSError as exc:
        raise OSError(f"{exc.filename or base_path}: {exc}") from exc
    if base.shape != mask.shape:
        raise ConfigError(f"{mask_path}: mask size {mask.shape} differs from image {base.shape}")
    rng = derive_stream(cfg.seed, index)
    try:
        image, ann = compose_scene(
            base, mask, library, cfg.cluster_spec(), rng, cfg.param_ranges(),
            sky_only=cfg.sky_only, mask_threshold=cfg.mask_threshold,
        )
    except (SkyTooSmall, ClusterPackingError) as exc:
        logger.warning("skipping %s: %s", base_path, exc)
        return None
    name = f"{index:05d}"
    image.save(out / "images" / f"{name}.png")
    mask.save(out / "masks_sky" / f"{name}.png")
    ann.save(out / "annotations" / name)
    return {
        "id": name,
        "source": base_path.name,
        "width": image.width,
        "height": image.height,
        "targets": len(ann),
    }


def _workers() -> int:
    raw = os.environ.get("FORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"FORGE_THREADS must be an integer, got {raw!r}")


def emit_dataset(cfg: GenerationConfig) -> dict:
    """Generate the dataset described by *cfg* and return its manifest."""
    base_dir, mask_dir, out = Path(cfg.base_dir), Path(cfg.mask_dir), Path(cfg.out_dir)
    bases = _list_images(base_dir)
    masks = []
    for b in bases:
        m = mask_dir / b.name
        if not m.exists():
            candidates = [p for p in mask_dir.glob(b.stem + ".*") if p.suffix.lower() in IMAGE_SUFFIXES]
            if not candidates:
                raise FileNotFoundError(f"{m}: no sky mask for base image {b}")
            m = candidates[0]
        masks.append(m)
    library = load_library(cfg.library_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(i, b, m) for i, (b, m) in enumerate(zip(bases, masks))]
    workers = _workers()
    if workers == 1:
        results = [_render_one(i, b, m, library, cfg, out) for i, b, m in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _render_one(*j, library, cfg, out), jobs))

    labels = _assign_splits([b.stem for b in bases], cfg)
    entries, skipped = [], []
    splits: Dict[str, List[str]] = {name: [] for name in cfg.splits}
    for (i, b, _), entry, label in zip(jobs, results, labels):
        if entry is None:
            skipped.append(b.name)
            continue
        entry["split"] = label
        splits.setdefault(label, []).append(entry["id"])
        entries.append(entry)
    manifest = {
        "master_seed": cfg.seed,
        "total_targets": sum(e["targets"] for e in entries),
        "images": entries,
        "splits": splits,
        "skipped": skipped,
    }
    _atomic_write_bytes(out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
    _atomic_write_bytes(out / "config.json", (json.dumps(cfg.to_dict(), indent=2) + "\n").encode())
    return manifest
