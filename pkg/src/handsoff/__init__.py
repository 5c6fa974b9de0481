"""Single-class YOLOv3 inference and evaluation toolkit for handshake localization."""

from .darknet import (
    NetworkSpec,
    ParameterizedNetwork,
    inspect,
    load_config,
    load_weights,
    load_weights_file,
    parse_config,
    reference_config_text,
    serialize_config,
)
from .engine import HeadOutput, Network, PreprocessRecord, forward, preprocess
from .events import EventAggregator, InteractionEvent, aggregate_events
from .metrics import average_precision, evaluate, iou, match_detections, mean_average_precision
from .pipeline import Detector, benchmark
from .postprocess import Detection, decode, map_to_source, nms
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Detection",
    "Detector",
    "EventAggregator",
    "HeadOutput",
    "InteractionEvent",
    "Network",
    "NetworkSpec",
    "ParameterizedNetwork",
    "PreprocessRecord",
    "Tensor",
    "aggregate_events",
    "average_precision",
    "benchmark",
    "decode",
    "evaluate",
    "forward",
    "inspect",
    "iou",
    "load_config",
    "load_weights",
    "load_weights_file",
    "map_to_source",
    "match_detections",
    "mean_average_precision",
    "nms",
    "parse_config",
    "preprocess",
    "reference_config_text",
    "serialize_config",
]
