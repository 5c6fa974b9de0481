"""Annotations, frames, detection files and overlay rendering."""

from __future__ import annotations

import io
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .errors import AnnotationError, DetectionsFormatError, FrameOrderError, HandsOffError
from .metrics import Box, cxcywh_to_corners
from .postprocess import Detection

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp")
CLAMP_WARN = 1e-3
CLAMP_ERROR = 0.05

PRED_COLOR = (0, 255, 0)
GT_COLOR = (255, 0, 0)
BORDER = 2


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    @property
    def corners(self) -> Box:
        return cxcywh_to_corners((self.cx, self.cy, self.w, self.h))

    def to_pixels(self, width: int, height: int) -> Box:
        x1, y1, x2, y2 = self.corners
        return (x1 * width, y1 * height, x2 * width, y2 * height)


@dataclass(frozen=True)
class FrameRecord:
    image_id: str
    path: Path
    width: int = 0
    height: int = 0
    frame_index: Optional[int] = None


# ---------------------------------------------------------------------------
# ground truth


def parse_annotation(text: str, image_id: str, path=None) -> List[GroundTruthBox]:
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise AnnotationError(f"expected 'class cx cy w h', got {line!r}", path, lineno)
        try:
            cls = int(fields[0])
            values = [float(v) for v in fields[1:]]
        except ValueError:
            raise AnnotationError(f"non-numeric field in {line!r}", path, lineno)
        if cls < 0:
            raise AnnotationError(f"negative class id {cls}", path, lineno)
        clamped = []
        for name, v in zip(("cx", "cy", "w", "h"), values):
            if not np.isfinite(v):
                raise AnnotationError(f"{name}={v} is not finite", path, lineno)
            overshoot = max(0.0, -v, v - 1.0)
            if overshoot > CLAMP_ERROR:
                raise AnnotationError(f"{name}={v} lies {overshoot:.3g} outside the unit square", path, lineno)
            if overshoot > CLAMP_WARN:
                log.warning("%s:%d: clamping %s=%s into [0, 1]", path, lineno, name, v)
            clamped.append(min(max(v, 0.0), 1.0))
        cx, cy, w, h = clamped
        # clip the box itself to the unit square
        x1, x2 = max(cx - w / 2, 0.0), min(cx + w / 2, 1.0)
        y1, y2 = max(cy - h / 2, 0.0), min(cy + h / 2, 1.0)
        if x2 <= x1 or y2 <= y1:
            raise AnnotationError(f"zero-area box in {line!r}", path, lineno)
        if (x1, y1, x2, y2) != (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2):
            cx, cy, w, h = (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1
        boxes.append(GroundTruthBox(image_id, cls, cx, cy, w, h))
    return boxes


def load_ground_truth(directory, image_ids: Optional[Iterable[str]] = None) -> Dict[str, List[GroundTruthBox]]:
    """Read ``<image_id>.txt`` files (``class cx cy w h``, normalized).

    With ``image_ids`` the result covers exactly that image set and a missing
    file means a negative frame. Without it, every ``.txt`` file counts.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise HandsOffError(f"ground-truth directory {directory} does not exist")
    if image_ids is None:
        ids = sorted(p.stem for p in directory.glob("*.txt"))
    else:
        ids = list(dict.fromkeys(image_ids))
    result = {}
    for image_id in ids:
        path = directory / f"{image_id}.txt"
        if path.exists():
            result[image_id] = parse_annotation(path.read_text(encoding="utf-8"), image_id, path)
        else:
            result[image_id] = []
    return result


def format_annotation(boxes: Sequence[GroundTruthBox]) -> str:
    return "".join(f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in boxes)


# ---------------------------------------------------------------------------
# detections (JSON lines)

_COORDS = ("cx", "cy", "w", "h")
_SCORES = ("objectness", "class_score", "confidence")


def detection_to_dict(det: Detection) -> dict:
    out = {"image_id": det.image_id, "class_id": int(det.class_id)}
    for key in _COORDS:
        out[key] = round(float(getattr(det, key)), 4)
    for key in _SCORES:
        out[key] = round(float(getattr(det, key)), 6)
    return out


def write_detections(dets: Iterable[Detection], sink: TextIO) -> int:
    """Write one JSON object per line; returns the number of lines."""
    n = 0
    for det in dets:
        sink.write(json.dumps(detection_to_dict(det)) + "\n")
        n += 1
    return n


def read_detections(lines: Iterable[str]) -> List[Detection]:
    if isinstance(lines, str):
        lines = io.StringIO(lines)
    out = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DetectionsFormatError(f"invalid JSON: {exc.msg}", lineno)
        if not isinstance(obj, dict):
            raise DetectionsFormatError("expected a JSON object", lineno)
        try:
            det = Detection(
                cx=float(obj["cx"]),
                cy=float(obj["cy"]),
                w=float(obj["w"]),
                h=float(obj["h"]),
                objectness=float(obj["objectness"]),
                class_score=float(obj["class_score"]),
                confidence=float(obj["confidence"]),
                class_id=int(obj["class_id"]),
                image_id=str(obj["image_id"]),
            )
        except KeyError as exc:
            raise DetectionsFormatError(f"missing field {exc.args[0]!r}", lineno)
        except (TypeError, ValueError) as exc:
            raise DetectionsFormatError(f"bad field value: {exc}", lineno)
        out.append(det)
    return out


def load_detections(path) -> List[Detection]:
    with open(path, encoding="utf-8") as fh:
        return read_detections(fh)


# ---------------------------------------------------------------------------
# frames


def decode_image(data: bytes) -> np.ndarray:
    """Encoded still image -> (H, W, 3) uint8 RGB."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except Exception as exc:  # PIL raises a zoo of exception types
        raise HandsOffError(f"cannot decode image: {exc}") from exc


def load_image(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise HandsOffError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_image(data)
    except HandsOffError as exc:
        raise HandsOffError(f"{path}: {exc}") from exc


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def image_size(path) -> Tuple[int, int]:
    with Image.open(path) as img:
        return img.size


_DIGITS = re.compile(r"(\d+)")


def natural_key(name: str):
    return [int(t) if t.isdigit() else t.lower() for t in _DIGITS.split(name)]


def trailing_number(stem: str) -> Optional[int]:
    m = re.search(r"(\d+)$", stem)
    return int(m.group(1)) if m else None


def list_frames(source) -> List[FrameRecord]:
    """Frames from a directory (natural name order) or a single image file."""
    source = Path(source)
    if source.is_file():
        paths = [source]
    elif source.is_dir():
        paths = sorted(
            (p for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
            key=lambda p: natural_key(p.name),
        )
    else:
        raise HandsOffError(f"input {source} does not exist")
    return frames_from_paths(paths)


def frames_from_paths(paths: Sequence[os.PathLike], check_order: bool = False) -> List[FrameRecord]:
    """Build frame records; indices come from trailing digits of the stem when
    every stem has them, else from list position."""
    paths = [Path(p) for p in paths]
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        dup = next(s for s in stems if stems.count(s) > 1)
        raise FrameOrderError(f"duplicate image id {dup!r}")
    numbers = [trailing_number(s) for s in stems]
    if paths and all(n is not None for n in numbers):
        indices = numbers
    else:
        indices = list(range(len(paths)))
    if check_order:
        for a, b, p in zip(indices, indices[1:], paths[1:]):
            if b == a:
                raise FrameOrderError(f"duplicate frame index {b} at {p}")
            if b < a:
                raise FrameOrderError(f"frame {p} (index {b}) comes after index {a}")
    return [FrameRecord(stem, p, frame_index=i) for stem, p, i in zip(stems, paths, indices)]


# ---------------------------------------------------------------------------
# overlays


def _draw_rect(canvas: np.ndarray, box: Box, color, thickness: int = BORDER) -> None:
    """Draw a clipped rectangle outline ``thickness`` pixels wide, inside the box."""
    h, w = canvas.shape[:2]
    x1, y1 = int(np.floor(box[0])), int(np.floor(box[1]))
    x2, y2 = int(np.ceil(box[2])) - 1, int(np.ceil(box[3])) - 1
    if x2 < x1 or y2 < y1:
        return
    t = thickness
    bands = [
        (y1, min(y1 + t - 1, y2), x1, x2),  # top
        (max(y2 - t + 1, y1), y2, x1, x2),  # bottom
        (y1, y2, x1, min(x1 + t - 1, x2)),  # left
        (y1, y2, max(x2 - t + 1, x1), x2),  # right
    ]
    for top, bottom, left, right in bands:
        top, bottom = max(top, 0), min(bottom, h - 1)
        left, right = max(left, 0), min(right, w - 1)
        if top <= bottom and left <= right:
            canvas[top : bottom + 1, left : right + 1] = color


def caption_box(box: Box, text: str, image_shape) -> Optional[Tuple[int, int, int, int]]:
    """Pixel rectangle (x1, y1, x2, y2 inclusive) a caption occupies, or None if off-image."""
    h, w = image_shape[:2]
    draw = ImageDraw.Draw(Image.new("RGB", (1, 1)))
    left, top, right, bottom = draw.textbbox((0, 0), text)
    tw, th = right - left + 2, bottom - top + 2
    x1 = int(np.floor(box[0]))
    y1 = int(np.floor(box[1])) - th
    if y1 < 0:
        y1 = int(np.floor(box[1]))
    x1c, y1c = max(x1, 0), max(y1, 0)
    x2c, y2c = min(x1 + tw - 1, w - 1), min(y1 + th - 1, h - 1)
    if x2c < x1c or y2c < y1c:
        return None
    return (x1c, y1c, x2c, y2c)


def render_overlay(
    image: np.ndarray,
    dets: Sequence[Detection],
    gts: Optional[Sequence[GroundTruthBox]] = None,
) -> np.ndarray:
    """Return a copy of ``image`` with predictions (green, captioned with
    confidence) and optional normalized ground truth (red) drawn on it."""
    canvas = np.array(image, dtype=np.uint8, copy=True)
    if not dets and not gts:
        return canvas
    h, w = canvas.shape[:2]
    for gt in gts or ():
        _draw_rect(canvas, gt.to_pixels(w, h), GT_COLOR)
    captions = []
    for det in dets:
        _draw_rect(canvas, det.corners, PRED_COLOR)
        text = f"{det.confidence:.2f}"
        cap = caption_box(det.corners, text, canvas.shape)
        if cap is not None:
            captions.append((cap, text))
    if captions:
        pil = Image.fromarray(canvas)
        draw = ImageDraw.Draw(pil)
        for (x1, y1, x2, y2), text in captions:
            draw.rectangle((x1, y1, x2, y2), fill=PRED_COLOR)
            draw.text((x1 + 1, y1), text, fill=(0, 0, 0))
        # text glyphs may extend past the filled caption; keep only the caption area
        drawn = np.asarray(pil)
        for (x1, y1, x2, y2), _ in captions:
            canvas[y1 : y2 + 1, x1 : x2 + 1] = drawn[y1 : y2 + 1, x1 : x2 + 1]
    return canvas
