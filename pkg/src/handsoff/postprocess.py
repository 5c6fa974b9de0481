"""Head decoding, greedy NMS and mapping boxes back to source pixels."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .engine import HeadOutput, PreprocessRecord
from .errors import ShapeError

DEFAULT_CONF_THRESHOLD = 0.25
DEFAULT_NMS_THRESHOLD = 0.45
MAX_LOG_SIZE = 10.0


@dataclass(frozen=True)
class Detection:
    cx: float
    cy: float
    w: float
    h: float
    objectness: float
    class_score: float
    confidence: float
    class_id: int = 0
    image_id: str = ""

    @property
    def corners(self) -> Tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def decode(
    head: Union[HeadOutput, np.ndarray],
    anchors: Optional[Sequence[Tuple[float, float]]] = None,
    stride: Union[float, Tuple[float, float], None] = None,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    classes: int = 1,
) -> List[Detection]:
    """Turn one head tensor into candidate boxes in network-input pixels.

    Channel ``a * (5 + classes) + k`` of the head holds attribute ``k`` of
    anchor slot ``a``: tx, ty, tw, th, objectness logit, then class logits.
    Candidates are emitted in (row, column, slot) order; only those with
    ``confidence >= conf_threshold`` are kept.
    """
    if isinstance(head, HeadOutput):
        anchors = head.anchors if anchors is None else anchors
        stride = (head.stride_x, head.stride_y) if stride is None else stride
        classes = head.classes
        values = head.tensor.array
    else:
        values = np.asarray(head)
    if anchors is None or stride is None:
        raise ValueError("anchors and stride are required for a raw head array")
    sx, sy = (stride, stride) if np.isscalar(stride) else stride
    n_slots = len(anchors)
    attrs = 5 + classes
    if values.ndim != 3 or values.shape[0] != n_slots * attrs:
        raise ShapeError("head depth", expected=n_slots * attrs, actual=values.shape[0] if values.ndim == 3 else values.shape)
    _, gh, gw = values.shape

    # (slots, attrs, gh, gw) -> (gh, gw, slots, attrs)
    v = values.reshape(n_slots, attrs, gh, gw).transpose(2, 3, 0, 1).astype(np.float64)
    cols = np.arange(gw, dtype=np.float64)[None, :, None]
    rows = np.arange(gh, dtype=np.float64)[:, None, None]
    anchor_w = np.array([a[0] for a in anchors], dtype=np.float64)[None, None, :]
    anchor_h = np.array([a[1] for a in anchors], dtype=np.float64)[None, None, :]

    cx = (_sigmoid(v[..., 0]) + cols) * sx
    cy = (_sigmoid(v[..., 1]) + rows) * sy
    w = anchor_w * np.exp(np.minimum(v[..., 2], MAX_LOG_SIZE))
    h = anchor_h * np.exp(np.minimum(v[..., 3], MAX_LOG_SIZE))
    obj = _sigmoid(v[..., 4])
    cls_prob = _sigmoid(v[..., 5:])
    class_id = np.argmax(cls_prob, axis=-1)
    class_score = np.take_along_axis(cls_prob, class_id[..., None], axis=-1)[..., 0]
    conf = obj * class_score

    keep = np.flatnonzero(conf.ravel() >= conf_threshold)
    flat = [a.ravel() for a in (cx, cy, w, h, obj, class_score, conf, class_id)]
    return [
        Detection(
            float(flat[0][k]),
            float(flat[1][k]),
            float(flat[2][k]),
            float(flat[3][k]),
            float(flat[4][k]),
            float(flat[5][k]),
            float(flat[6][k]),
            int(flat[7][k]),
        )
        for k in keep
    ]


def nms(dets: Sequence[Detection], iou_threshold: float = DEFAULT_NMS_THRESHOLD) -> List[Detection]:
    """Greedy class-wise suppression.

    The highest-confidence survivor is kept and every remaining box of the same
    class overlapping it by IoU > ``iou_threshold`` is dropped. Equal
    confidences keep input order. Output is sorted by descending confidence.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    if not dets:
        return []
    order = np.argsort([-d.confidence for d in dets], kind="stable")
    boxes = np.array([dets[k].corners for k in order], dtype=np.float64)
    classes = np.array([dets[k].class_id for k in order])
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    alive = np.ones(len(order), dtype=bool)
    kept: List[Detection] = []
    for pos in range(len(order)):
        if not alive[pos]:
            continue
        kept.append(dets[order[pos]])
        rest = pos + 1 + np.flatnonzero(alive[pos + 1 :] & (classes[pos + 1 :] == classes[pos]))
        if rest.size == 0:
            continue
        # same operation order as metrics.iou, so decisions match it exactly
        iw = np.minimum(x2[pos], x2[rest]) - np.maximum(x1[pos], x1[rest])
        ih = np.minimum(y2[pos], y2[rest]) - np.maximum(y1[pos], y1[rest])
        overlap = (iw > 0) & (ih > 0)
        inter = iw * ih
        union = areas[pos] + areas[rest] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(overlap & (union > 0), inter / union, 0.0)
        alive[rest[ratio > iou_threshold]] = False
    return kept


def map_to_source(det: Detection, record: PreprocessRecord, clamp: bool = True) -> Detection:
    """Network-input pixels -> source-image pixels, optionally clamped to the image."""
    cx = (det.cx - record.pad_x) / record.scale_x
    cy = (det.cy - record.pad_y) / record.scale_y
    w = det.w / record.scale_x
    h = det.h / record.scale_y
    if clamp:
        x1 = min(max(cx - w / 2, 0.0), record.source_width)
        x2 = min(max(cx + w / 2, 0.0), record.source_width)
        y1 = min(max(cy - h / 2, 0.0), record.source_height)
        y2 = min(max(cy + h / 2, 0.0), record.source_height)
        cx, cy, w, h = (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1
    return replace(det, cx=cx, cy=cy, w=w, h=h)


def map_to_network(det: Detection, record: PreprocessRecord) -> Detection:
    """Inverse of :func:`map_to_source` (without clamping)."""
    return replace(
        det,
        cx=det.cx * record.scale_x + record.pad_x,
        cy=det.cy * record.scale_y + record.pad_y,
        w=det.w * record.scale_x,
        h=det.h * record.scale_y,
    )


def postprocess(
    heads: Sequence[HeadOutput],
    record: PreprocessRecord,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    nms_threshold: float = DEFAULT_NMS_THRESHOLD,
    image_id: str = "",
) -> List[Detection]:
    """decode -> nms -> map, dropping boxes that fall entirely off the image."""
    candidates: List[Detection] = []
    for head in heads:
        candidates.extend(decode(head, conf_threshold=conf_threshold))
    out = []
    for det in nms(candidates, nms_threshold):
        mapped = map_to_source(det, record)
        if mapped.w > 0 and mapped.h > 0:
            out.append(replace(mapped, image_id=image_id))
    return out
