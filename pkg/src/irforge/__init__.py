"""Clustered infrared small-target toolkit.

Gaussian copy-paste synthesis of dense target clusters, background-aware
augmentation, a cross-task feature exchange kernel and detection metrics.
"""

from .compose import (
    BagCopyPaste,
    ClusterPackingError,
    ClusterSpec,
    Placement,
    SkyTooSmall,
    bag_cp_augment,
    compose_scene,
    place_cluster,
    select_dense_areas,
)
from .dataset import GenerationConfig, emit_dataset
from .exchange import ExchangeConfig, ExchangeParams, FeatureExchange, hard_exchange, spatial_exchange
from .gauss import (
    GaussianParams,
    ParamRanges,
    TargetChip,
    gaussian_matrix,
    paste_target,
    resize_chip,
    rotate_coords,
    sample_params,
)
from .metrics import DetectionRecord, EvalReport, average_precision, evaluate, iou, \
    match_detections, recall_at
from .rng import derive_stream
from .stats import DatasetStats, dataset_stats, local_contrast
from .types import Annotation, BBox, BoundsError, GrayImage, SkyMask, crop

__version__ = "0.1.0"
