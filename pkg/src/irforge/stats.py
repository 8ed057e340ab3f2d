"""Target statistics for generated datasets: size, local contrast, brightness."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from .types import Annotation, BBox, GrayImage

RING_WIDTH = 2
CONTRAST_EDGES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, math.inf)
BRIGHTNESS_EDGES = tuple(range(0, 257, 16))


def local_contrast(img, box: BBox, ring: int = RING_WIDTH) -> float:
    """Peak intensity in ``box`` over the mean of the surrounding ring.

    The ring is ``ring`` pixels wide, clipped at the image border, and
    includes any neighbouring targets that fall inside it.  A zero ring mean
    gives ``inf``.
    """
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    pixels = pixels.astype(np.float64)
    h, w = pixels.shape
    if box.x_max > w or box.y_max > h:
        raise ValueError(f"box {box.as_tuple()} outside {w}x{h} image")
    x0, y0 = max(box.x_min - ring, 0), max(box.y_min - ring, 0)
    x1, y1 = min(box.x_max + ring, w), min(box.y_max + ring, h)
    outer = pixels[y0:y1, x0:x1]
    n_ring = outer.size - box.area
    if n_ring == 0:
        raise ValueError(f"box {box.as_tuple()} leaves no background ring")
    inner = pixels[box.slices()]
    ring_mean = (outer.sum() - inner.sum()) / n_ring
    peak = inner.max()
    if ring_mean == 0:
        return math.inf
    return float(peak / ring_mean)


def _histogram(values, edges) -> List[int]:
    """Counts per ``[edges[i], edges[i+1])``; the last bin is closed and catches overflow."""
    edges = np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    return [int(c) for c in np.bincount(idx, minlength=len(edges) - 1)]


@dataclass
class DatasetStats:
    total_targets: int
    size_histogram: Dict[str, int]
    contrast_edges: List[float]
    contrast_histogram: List[int]
    brightness_edges: List[int]
    brightness_histogram: List[int]
    mean_target_area: float
    mean_bbox_width: float
    mean_bbox_height: float
    mean_bbox_side: float
    fraction_contrast_below_2: float
    brightest_fraction: float
    per_image: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["contrast_edges"] = ["inf" if math.isinf(e) else e for e in self.contrast_edges]
        return d


def target_records(img: GrayImage, ann: Annotation) -> List[dict]:
    """Per-target measurements for one image."""
    pixels = img.pixels
    global_max = int(pixels.max())
    out = []
    for box in ann.boxes:
        peak = int(pixels[box.slices()].max())
        out.append({
            "width": box.width,
            "height": box.height,
            "area": int(ann.mask[box.slices()].sum()),
            "contrast": local_contrast(img, box),
            "peak": peak,
            "brightest": peak == global_max,
        })
    return out


def summarize(records: List[dict], per_image: Dict[str, int] = None) -> DatasetStats:
    n = len(records)
    if n == 0:
        raise ValueError("no annotated targets")
    sizes = Counter(f"{r['width']}x{r['height']}" for r in records)
    contrast = np.array([r["contrast"] for r in records], dtype=np.float64)
    peaks = np.array([r["peak"] for r in records], dtype=np.float64)
    widths = np.array([r["width"] for r in records], dtype=np.float64)
    heights = np.array([r["height"] for r in records], dtype=np.float64)
    contrast_hist = _histogram(contrast, CONTRAST_EDGES)
    brightness_hist = _histogram(peaks, BRIGHTNESS_EDGES)
    return DatasetStats(
        total_targets=n,
        size_histogram=dict(sorted(sizes.items())),
        contrast_edges=list(CONTRAST_EDGES),
        contrast_histogram=contrast_hist,
        brightness_edges=list(BRIGHTNESS_EDGES),
        brightness_histogram=brightness_hist,
        mean_target_area=float(np.mean([r["area"] for r in records])),
        mean_bbox_width=float(widths.mean()),
        mean_bbox_height=float(heights.mean()),
        mean_bbox_side=float(((widths + heights) / 2).mean()),
        fraction_contrast_below_2=float(np.mean(contrast < 2)),
        brightest_fraction=float(np.mean([r["brightest"] for r in records])),
        per_image=dict(per_image or {}),
    )


def dataset_stats(root) -> DatasetStats:
    """Statistics over every annotated image under a generated dataset tree."""
    root = Path(root)
    ann_root = root / "annotations"
    if not ann_root.is_dir():
        raise FileNotFoundError(f"{ann_root}: no annotations directory")
    records, per_image = [], {}
    for d in sorted(p for p in ann_root.iterdir() if p.is_dir()):
        img_path = root / "images" / f"{d.name}.png"
        if not img_path.exists():
            raise FileNotFoundError(f"{img_path}: image missing for annotation {d}")
        img = GrayImage.load(img_path)
        ann = Annotation.load(d)
        recs = target_records(img, ann)
        per_image[d.name] = len(recs)
        records.extend(recs)
    manifest = root / "manifest.json"
    if manifest.exists():
        expected = json.loads(manifest.read_text()).get("total_targets")
        if expected is not None and expected != len(records):
            raise ValueError(f"{manifest}: lists {expected} targets, tree has {len(records)}")
    return summarize(records, per_image)
