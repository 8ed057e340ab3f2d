"""Shared value types: grayscale rasters, sky masks, boxes and annotations."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from PIL import Image


class BoundsError(ValueError):
    """Raised when a box does not fit inside an image."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    # Copy so the caller's buffer stays writable and cannot alias ours.
    arr = np.array(arr, order="C", copy=True)
    arr.setflags(write=False)
    return arr


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clip real intensities to 8-bit."""
    values = np.asarray(values, dtype=np.float64)
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class BBox:
    """Half-open integer rectangle ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"empty box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def shift(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def intersection_area(self, other: "BBox") -> int:
        w = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        h = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        return max(w, 0) * max(h, 0)

    def gap(self, other: "BBox") -> int:
        """Chebyshev distance between borders, in empty pixels.

        Touching boxes have gap 0; overlapping boxes have a negative gap.
        """
        gx = max(other.x_min - self.x_max, self.x_min - other.x_max)
        gy = max(other.y_min - self.y_max, self.y_min - other.y_max)
        return max(gx, gy)

    def slices(self) -> Tuple[slice, slice]:
        """Row/column slices for indexing a ``(height, width)`` array."""
        return slice(self.y_min, self.y_max), slice(self.x_min, self.x_max)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel 8-bit raster stored as a read-only ``(height, width)`` array."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.integer) and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("integer intensities must lie in [0, 255]")
            arr = to_uint8(arr)
        object.__setattr__(self, "pixels", _frozen(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def full_box(self) -> BBox:
        return BBox(0, 0, self.width, self.height)

    def save(self, path) -> None:
        _write_png(self.pixels, path)

    @classmethod
    def load(cls, path) -> "GrayImage":
        with Image.open(path) as im:
            return cls(np.array(im.convert("L"), dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class SkyMask:
    """Binary sky annotation; ``True`` marks sky pixels."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        object.__setattr__(self, "bits", _frozen(arr != 0))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bits.shape

    def __eq__(self, other):
        if not isinstance(other, SkyMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def save(self, path) -> None:
        _write_png(self.bits.astype(np.uint8) * 255, path)

    @classmethod
    def load(cls, path) -> "SkyMask":
        with Image.open(path) as im:
            return cls(np.array(im.convert("L")) >= 128)


@dataclass(frozen=True, eq=False)
class Annotation:
    """Per-image ground truth: one box and one peak point per target, plus a pixel mask.

    Points are kept at 0.01 px resolution so that the CSV form round-trips exactly.
    """

    boxes: Tuple[BBox, ...]
    points: Tuple[Tuple[float, float], ...]
    mask: np.ndarray

    def __post_init__(self):
        boxes = tuple(self.boxes)
        points = tuple((round(float(x), 2), round(float(y), 2)) for x, y in self.points)
        mask = np.asarray(self.mask) != 0
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if len(points) != len(boxes):
            raise ValueError(f"{len(points)} points for {len(boxes)} boxes")
        for b, (x, y) in zip(boxes, points):
            if not b.contains_point(x, y):
                raise ValueError(f"point ({x}, {y}) outside its box {b.as_tuple()}")
        if mask.any():
            covered = np.zeros_like(mask)
            for b in boxes:
                covered[b.slices()] = True
            if (mask & ~covered).any():
                raise ValueError("mask has pixels outside every box")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def empty(cls, height: int, width: int) -> "Annotation":
        return cls((), (), np.zeros((height, width), dtype=bool))

    def __len__(self) -> int:
        return len(self.boxes)

    def __eq__(self, other):
        if not isinstance(other, Annotation):
            return NotImplemented
        return (
            self.boxes == other.boxes
            and self.points == other.points
            and np.array_equal(self.mask, other.mask)
        )

    def merged(self, boxes: Iterable[BBox], points: Iterable[Tuple[float, float]],
               mask: np.ndarray) -> "Annotation":
        return Annotation(
            self.boxes + tuple(boxes),
            self.points + tuple(points),
            self.mask | (np.asarray(mask) != 0),
        )

    def save(self, directory) -> None:
        """Write ``boxes.txt``, ``points.csv`` and ``mask.png`` into *directory*."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        lines = "".join(f"{b.x_min} {b.y_min} {b.x_max} {b.y_max}\n" for b in self.boxes)
        _atomic_write_bytes(d / "boxes.txt", lines.encode())
        rows = "".join(f"{x:.2f},{y:.2f}\n" for x, y in self.points)
        _atomic_write_bytes(d / "points.csv", ("cx,cy\n" + rows).encode())
        _write_png(self.mask.astype(np.uint8) * 255, d / "mask.png")

    @classmethod
    def load(cls, directory) -> "Annotation":
        d = Path(directory)
        boxes = read_boxes(d / "boxes.txt")
        points: List[Tuple[float, float]] = []
        with open(d / "points.csv") as fh:
            header = fh.readline().strip()
            if header != "cx,cy":
                raise ValueError(f"{d / 'points.csv'}: bad header {header!r}")
            for line in fh:
                if line.strip():
                    x, y = line.split(",")
                    points.append((float(x), float(y)))
        with Image.open(d / "mask.png") as im:
            mask = np.array(im.convert("L")) >= 128
        return cls(tuple(boxes), tuple(points), mask)


def read_boxes(path) -> List[BBox]:
    boxes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 integers")
            boxes.append(BBox(*(int(p) for p in parts)))
    return boxes


def crop(img: GrayImage, box: BBox) -> GrayImage:
    """Return the sub-image covered by *box*."""
    if box.x_max > img.width or box.y_max > img.height:
        raise BoundsError(
            f"box {box.as_tuple()} exceeds image of size {img.width}x{img.height}"
        )
    return GrayImage(img.pixels[box.slices()].copy())


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_png(arr: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8)).save(tmp, format="PNG")
    os.replace(tmp, path)


def boxes_overlap_any(boxes: Sequence[BBox]) -> bool:
    return any(
        a.intersection_area(b) > 0
        for i, a in enumerate(boxes)
        for b in boxes[i + 1:]
    )
