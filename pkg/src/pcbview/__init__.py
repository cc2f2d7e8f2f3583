"""Viewpoint-robustness tooling for PCB defect detection.

Geometry and label transforms, shear/rotate/tile/blur augmentation, IoU-family
losses with analytic gradients, a small attention block, detection metrics and
dataset I/O.
"""

__version__ = "0.1.0"

from .augment import (  # noqa: E402
    CONTRAST_PRESETS,
    AugmentSpec,
    LabeledImage,
    build_contrast_dataset,
    build_shear_rotate_dataset,
    tile_2x2,
    viewpoint_rotation,
    warp_labeled,
)
from .cbam import CbamWeights, cbam_forward, channel_attention, init_weights, spatial_attention  # noqa: E402
from .dataset import (  # noqa: E402
    PKU_CLASSES,
    DatasetManifest,
    LabelFormatError,
    ManifestItem,
    SplitSpec,
    parse_predictions,
    parse_voc_xml,
    parse_yolo_label,
    read_manifest,
    split_dataset,
    write_manifest,
)
from .geometry import AffineMatrix, BBox, Point, clip_bbox, iou, rotation_matrix, shear_matrix, transform_bbox  # noqa: E402
from .losses import SIoUParams, ciou_loss, loss_gradient_check, siou_loss  # noqa: E402
from .metrics import Detection, GroundTruth, MetricsReport, evaluate  # noqa: E402
