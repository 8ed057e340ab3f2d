"""Clustered scene composition and background-aware copy-paste augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .gauss import (
    GaussianParams,
    ParamRanges,
    TargetChip,
    added_intensity,
    gaussian_center,
    resize_chip,
    sample_params,
)
from .rng import derive_stream
from .types import Annotation, BBox, GrayImage, SkyMask, to_uint8

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 5.0
MAX_PACKING_ATTEMPTS = 1000


class SkyTooSmall(ValueError):
    """No sky square large enough for a dense area."""


class ClusterPackingError(RuntimeError):
    """A cluster could not be packed with the minimum number of targets."""


@dataclass(frozen=True)
class ClusterSpec:
    """Dense-area layout parameters.

    ``clusters_min = clusters_max = 0`` is allowed and yields empty scenes.
    """

    region_size: int = 20
    clusters_min: int = 1
    clusters_max: int = 3
    targets_min: int = 8
    targets_max: int = 12
    chip_min: int = 1
    chip_max: int = 5
    spacing_min: int = 1
    spacing_max: int = 2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if int(v) != v:
                raise ValueError(f"{f.name} must be an integer, got {v!r}")
            object.__setattr__(self, f.name, int(v))
        if self.clusters_max == 0 and self.clusters_min == 0:
            pass
        elif not 1 <= self.clusters_min <= self.clusters_max:
            raise ValueError("need 1 <= clusters_min <= clusters_max")
        if not 1 <= self.targets_min <= self.targets_max:
            raise ValueError("need 1 <= targets_min <= targets_max")
        if not 1 <= self.chip_min <= self.chip_max <= 5:
            raise ValueError("need 1 <= chip_min <= chip_max <= 5")
        if not 1 <= self.spacing_min <= self.spacing_max:
            raise ValueError("need 1 <= spacing_min <= spacing_max")
        if self.region_size < self.chip_max + self.spacing_max:
            raise ValueError("region_size must be at least chip_max + spacing_max")

    @property
    def empty(self) -> bool:
        return self.clusters_max == 0


@dataclass(frozen=True)
class Placement:
    chip_index: int
    box: BBox
    params: GaussianParams


def _feasible_corners(bits: np.ndarray, size: int) -> np.ndarray:
    """Boolean map of top-left corners whose ``size`` x ``size`` square is all true."""
    h, w = bits.shape
    if h < size or w < size:
        return np.zeros((0, 0), dtype=bool)
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(bits, axis=0, dtype=np.int64), axis=1)
    sums = ii[size:, size:] - ii[:-size, size:] - ii[size:, :-size] + ii[:-size, :-size]
    return sums == size * size


def select_dense_areas(mask: SkyMask, spec: ClusterSpec, rng: np.random.Generator) -> List[BBox]:
    """Pick disjoint all-sky squares for the target clusters.

    The cluster count is drawn uniformly from ``[clusters_min, clusters_max]``;
    each square is then drawn uniformly from the corners still free.  When the
    sky runs out before the drawn count, fewer squares are returned, but never
    fewer than ``clusters_min``.
    """
    if spec.empty:
        return []
    size = spec.region_size
    free = _feasible_corners(np.asarray(mask.bits), size)
    if not free.any():
        raise SkyTooSmall(f"no all-sky {size}x{size} square in a {mask.width}x{mask.height} mask")
    free = free.copy()
    n = int(rng.integers(spec.clusters_min, spec.clusters_max + 1))
    areas = []
    for _ in range(n):
        candidates = np.flatnonzero(free)
        if candidates.size == 0:
            break
        y, x = divmod(int(candidates[rng.integers(candidates.size)]), free.shape[1])
        areas.append(BBox(x, y, x + size, y + size))
        free[max(y - size + 1, 0):y + size, max(x - size + 1, 0):x + size] = False
    if len(areas) < spec.clusters_min:
        raise SkyTooSmall(f"only {len(areas)} disjoint sky squares, need {spec.clusters_min}")
    return areas


def _try_pack(m: int, spec: ClusterSpec, rng: np.random.Generator) -> List[Tuple[int, int, int, int]]:
    """One sequential packing attempt in region-local coordinates.

    Each new box keeps at least ``spacing_min`` from every placed box and lies
    within ``spacing_max`` of at least one of them.
    """
    r = spec.region_size
    placed: List[Tuple[int, int, int, int]] = []
    for _ in range(m):
        w, h = (int(v) for v in rng.integers(spec.chip_min, spec.chip_max + 1, size=2))
        ys, xs = np.mgrid[0:r - h + 1, 0:r - w + 1]
        ok = np.ones(xs.shape, dtype=bool)
        near = np.zeros(xs.shape, dtype=bool) if placed else np.ones(xs.shape, dtype=bool)
        for bx0, by0, bx1, by1 in placed:
            gap = np.maximum(
                np.maximum(bx0 - (xs + w), xs - bx1),
                np.maximum(by0 - (ys + h), ys - by1),
            )
            ok &= gap >= spec.spacing_min
            near |= gap <= spec.spacing_max
        candidates = np.flatnonzero(ok & near)
        if candidates.size == 0:
            break
        k = int(candidates[rng.integers(candidates.size)])
        y, x = divmod(k, xs.shape[1])
        placed.append((x, y, x + w, y + h))
    return placed


def place_cluster(
    region: BBox,
    library_size: int,
    spec: ClusterSpec,
    rng: np.random.Generator,
    ranges: ParamRanges = ParamRanges(),
    max_attempts: int = MAX_PACKING_ATTEMPTS,
) -> List[Placement]:
    """Lay out one cluster of chips inside ``region``.

    Rejection sampling: whole layouts are retried up to ``max_attempts`` times.
    If none reaches the drawn target count, the largest partial layout is kept
    as long as it has at least ``targets_min`` boxes.
    """
    if region.width != spec.region_size or region.height != spec.region_size:
        raise ValueError(f"region must be {spec.region_size}x{spec.region_size}")
    if library_size < 1:
        raise ValueError("target library is empty")
    # Each box plus a spacing_min margin on two sides tiles disjointly.
    footprint = (spec.chip_min + spec.spacing_min) ** 2
    if spec.targets_min * footprint > (spec.region_size + spec.spacing_min) ** 2:
        raise ClusterPackingError(
            f"{spec.targets_min} chips of at least {spec.chip_min}px with spacing "
            f"{spec.spacing_min} cannot fit a {spec.region_size}px region"
        )
    m = int(rng.integers(spec.targets_min, spec.targets_max + 1))
    best: List[Tuple[int, int, int, int]] = []
    for _ in range(max_attempts):
        layout = _try_pack(m, spec, rng)
        if len(layout) > len(best):
            best = layout
        if len(best) == m:
            break
    if len(best) < spec.targets_min:
        raise ClusterPackingError(
            f"packed {len(best)} of at least {spec.targets_min} targets after {max_attempts} attempts"
        )
    placements = []
    for x0, y0, x1, y1 in best:
        box = BBox(region.x_min + x0, region.y_min + y0, region.x_min + x1, region.y_min + y1)
        idx = int(rng.integers(library_size))
        placements.append(Placement(idx, box, sample_params(rng, ranges)))
    return placements


def _paste_all(
    base: GrayImage,
    areas: Sequence[BBox],
    library: Sequence[TargetChip],
    spec: ClusterSpec,
    rng: np.random.Generator,
    ranges: ParamRanges,
    mask_threshold: float,
):
    canvas = base.pixels.astype(np.float64)
    target_mask = np.zeros(base.shape, dtype=bool)
    boxes, points = [], []
    for area in areas:
        for pl in place_cluster(area, len(library), spec, rng, ranges):
            box = pl.box
            chip = resize_chip(library[pl.chip_index], box.width, box.height)
            add = added_intensity(chip, pl.params)
            canvas[box.slices()] += add
            target_mask[box.slices()] |= add >= mask_threshold
            cx, cy = gaussian_center(box.width, box.height, pl.params)
            boxes.append(box)
            points.append((box.x_min + cx, box.y_min + cy))
    return GrayImage(to_uint8(canvas)), boxes, points, target_mask


def _as_chips(library) -> List[TargetChip]:
    chips = [c if isinstance(c, TargetChip) else TargetChip(c) for c in library]
    if not chips:
        raise ValueError("target library is empty")
    return chips


def compose_scene(
    base: GrayImage,
    mask: SkyMask,
    library: Sequence[TargetChip],
    spec: ClusterSpec = ClusterSpec(),
    rng: Optional[np.random.Generator] = None,
    ranges: ParamRanges = ParamRanges(),
    sky_only: bool = True,
    mask_threshold: float = MASK_THRESHOLD,
) -> Tuple[GrayImage, Annotation]:
    """Paste clustered targets into ``base`` and annotate them.

    A pasted pixel joins the target mask when its added intensity reaches
    ``mask_threshold``.  Each point is the continuous Gaussian peak.
    """
    if base.shape != mask.shape:
        raise ValueError(f"image {base.shape} and mask {mask.shape} differ in size")
    if rng is None:
        rng = derive_stream(0, 0)
    if spec.empty:
        return base, Annotation.empty(*base.shape)
    chips = _as_chips(library)
    paste_zone = mask if sky_only else SkyMask(np.ones(base.shape, dtype=bool))
    areas = select_dense_areas(paste_zone, spec, rng)
    image, boxes, points, target_mask = _paste_all(
        base, areas, chips, spec, rng, ranges, mask_threshold
    )
    return image, Annotation(tuple(boxes), tuple(points), target_mask)


def bag_cp_augment(
    img: GrayImage,
    mask: SkyMask,
    ann: Annotation,
    library: Sequence[TargetChip],
    spec: ClusterSpec = ClusterSpec(),
    rng: Optional[np.random.Generator] = None,
    ranges: ParamRanges = ParamRanges(),
    sky_only: bool = True,
    mask_threshold: float = MASK_THRESHOLD,
) -> Tuple[GrayImage, Annotation]:
    """Background-aware Gaussian copy-paste on a training sample.

    New clusters go only where the sky mask is set and never over existing
    ground-truth boxes.  If no site is available the inputs come back unchanged.
    """
    if img.shape != mask.shape or ann.mask.shape != img.shape:
        raise ValueError("image, sky mask and annotation mask must share a size")
    if rng is None:
        rng = derive_stream(0, 0)
    if spec.empty:
        return img, ann
    chips = _as_chips(library)
    zone = np.array(mask.bits) if sky_only else np.ones(img.shape, dtype=bool)
    for b in ann.boxes:
        zone[b.slices()] = False
    try:
        areas = select_dense_areas(SkyMask(zone), spec, rng)
        image, boxes, points, target_mask = _paste_all(
            img, areas, chips, spec, rng, ranges, mask_threshold
        )
    except (SkyTooSmall, ClusterPackingError) as exc:
        logger.debug("copy-paste skipped: %s", exc)
        return img, ann
    return image, ann.merged(boxes, points, target_mask)


class BagCopyPaste(TransformerMixin, BaseEstimator):
    """Background-aware Gaussian copy-paste as a scikit-learn transformer.

    ``fit`` stores the target library; ``transform`` takes an iterable of
    ``(image, sky_mask, annotation)`` triples and returns augmented
    ``(image, annotation)`` pairs.  Sample ``i`` of a call draws from stream
    ``i`` of ``random_state``, so results do not depend on batch order.

    Examples
    --------
    >>> import numpy as np
    >>> from irforge import BagCopyPaste, GrayImage, SkyMask, Annotation
    >>> aug = BagCopyPaste(random_state=0).fit([np.full((3, 3), 120.0)])
    >>> img = GrayImage(np.full((64, 64), 40, dtype=np.uint8))
    >>> sky = SkyMask(np.ones((64, 64), dtype=bool))
    >>> [(out, ann)] = aug.transform([(img, sky, Annotation.empty(64, 64))])
    >>> 8 <= len(ann) <= 36
    True
    """

    def __init__(
        self,
        region_size: int = 20,
        clusters: Tuple[int, int] = (1, 3),
        targets: Tuple[int, int] = (8, 12),
        chip_size: Tuple[int, int] = (1, 5),
        spacing: Tuple[int, int] = (1, 2),
        rho_range: Tuple[float, float] = (0.0, 0.2),
        sigma_range: Tuple[float, float] = (0.3, 0.6),
        theta_range: Tuple[float, float] = (-90.0, 90.0),
        brightness_range: Tuple[float, float] = (0.5, 1.0),
        sky_only: bool = True,
        mask_threshold: float = MASK_THRESHOLD,
        random_state: int = 0,
    ):
        self.region_size = region_size
        self.clusters = clusters
        self.targets = targets
        self.chip_size = chip_size
        self.spacing = spacing
        self.rho_range = rho_range
        self.sigma_range = sigma_range
        self.theta_range = theta_range
        self.brightness_range = brightness_range
        self.sky_only = sky_only
        self.mask_threshold = mask_threshold
        self.random_state = random_state

    def _spec(self) -> ClusterSpec:
        return ClusterSpec(
            region_size=self.region_size,
            clusters_min=self.clusters[0], clusters_max=self.clusters[1],
            targets_min=self.targets[0], targets_max=self.targets[1],
            chip_min=self.chip_size[0], chip_max=self.chip_size[1],
            spacing_min=self.spacing[0], spacing_max=self.spacing[1],
        )

    def _ranges(self) -> ParamRanges:
        return ParamRanges(self.rho_range, self.sigma_range, self.theta_range, self.brightness_range)

    def fit(self, X, y=None):
        """Store the chip library ``X`` (2-D arrays or :class:`TargetChip`)."""
        self._spec()
        self._ranges()
        self.chips_ = _as_chips(X)
        self.n_chips_ = len(self.chips_)
        return self

    def transform(self, X):
        check_is_fitted(self, "chips_")
        spec, ranges = self._spec(), self._ranges()
        out = []
        for i, (img, mask, ann) in enumerate(X):
            rng = derive_stream(int(self.random_state), i)
            out.append(bag_cp_augment(
                img, mask, ann, self.chips_, spec, rng, ranges,
                sky_only=self.sky_only, mask_threshold=self.mask_threshold,
            ))
        return out
