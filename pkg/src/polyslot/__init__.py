"""Polygon parking-slot toolkit.

Ordered four-corner slot polygons, the corner-GIoU regression loss and its
gradient, fisheye surround-view topview synthesis, grid-head decoding with
polygon NMS, and polygon-aware detection metrics.
"""

__version__ = "0.1.0"

from .camera import FisheyeCamera, fixture_rig_path, load_rig, save_rig
from .dataset import LabeledFrame, SlotAugmenter, read_annotations, write_annotations
from .decode import HeadSpec, SlotDecoder, decode, polygon_nms
from .evaluation import EvalReport, MatchResult, compute_report, entrance_accuracy, match_frame
from .geometry import PolygonSlot, RelativeSlot, SlotType, entrance_angle, validate_slot
from .iou import AxisBox, box_giou, box_iou, polygon_corner_giou, polygon_iou_exact
from .loss import LossWeights, SlotFitter, fit_polygon, polygon_loss
from .topview import TopviewSpec, TopviewStitcher, build_remap_table, synthesize_topview

__all__ = [
    "FisheyeCamera", "fixture_rig_path", "load_rig", "save_rig",
    "LabeledFrame", "SlotAugmenter", "read_annotations", "write_annotations",
    "HeadSpec", "SlotDecoder", "decode", "polygon_nms",
    "EvalReport", "MatchResult", "compute_report", "entrance_accuracy", "match_frame",
    "PolygonSlot", "RelativeSlot", "SlotType", "entrance_angle", "validate_slot",
    "AxisBox", "box_giou", "box_iou", "polygon_corner_giou", "polygon_iou_exact",
    "LossWeights", "SlotFitter", "fit_polygon", "polygon_loss",
    "TopviewSpec", "TopviewStitcher", "build_remap_table", "synthesize_topview",
]
