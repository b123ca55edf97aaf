"""Online multi-object tracking with a deformable-attention state predictor."""

from .geometry import BBox, CenterSidesBox, ImageSize, decode_box, encode_box, giou, iou
from .kalman import KalmanState, kf_init, kf_predict, kf_update
from .tracker import Detection, FrameResult, Track, Tracker, TrackerConfig, TrackStatus

__all__ = [
    "BBox", "CenterSidesBox", "ImageSize", "decode_box", "encode_box",
    "giou", "iou", "KalmanState", "kf_init", "kf_predict", "kf_update",
    "Detection", "FrameResult", "Track", "Tracker", "TrackerConfig",
    "TrackStatus",
]
