"""Detection scoring: IoU, greedy matching, PR curves and average precision."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

DEFAULT_IOU_THRESHOLD = 0.5
ALL_POINT = "all-point"
ELEVEN_POINT = "11-point"

Box = Tuple[float, float, float, float]


def xywh_to_corners(box: Sequence[float]) -> Box:
    x, y, w, h = box
    return (x, y, x + w, y + h)


def cxcywh_to_corners(box: Sequence[float]) -> Box:
    cx, cy, w, h = box
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two corner-form (x1, y1, x2, y2) boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class ScoredBox:
    """A detection reduced to what matching needs."""

    image_id: str
    confidence: float
    box: Box
    class_id: int = 0
    order: int = 0


@dataclass(frozen=True)
class MatchResult:
    image_id: str
    confidence: float
    is_tp: bool
    gt_index: Optional[int]
    iou: float
    order: int = 0


def _match_image(dets: Sequence[ScoredBox], gts: Sequence[Box], iou_threshold: float) -> List[MatchResult]:
    matched = [False] * len(gts)
    out = []
    for det in sorted(dets, key=lambda d: (-d.confidence, d.order)):
        best, best_iou = None, 0.0
        for g, gt in enumerate(gts):
            if matched[g]:
                continue
            o = iou(det.box, gt)
            if o > best_iou:
                best, best_iou = g, o
        if best is not None and best_iou >= iou_threshold:
            matched[best] = True
            out.append(MatchResult(det.image_id, det.confidence, True, best, best_iou, det.order))
        else:
            out.append(MatchResult(det.image_id, det.confidence, False, None, best_iou, det.order))
    return out


def match_detections(
    dets: Mapping[str, Sequence[ScoredBox]],
    gts: Mapping[str, Sequence[Box]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    threads: int = 1,
) -> List[MatchResult]:
    """Label every detection TP or FP.

    Detections are visited by descending confidence; each takes the unmatched
    ground-truth box of its own image with the highest IoU, and is a TP when
    that IoU reaches ``iou_threshold``. A ground-truth box is used at most once,
    so duplicates become FPs. Images are independent, so with ``threads > 1``
    they are matched in parallel and merged afterwards. The merged list is
    ordered by confidence, then image id, then input order.
    """
    image_ids = sorted(dets)

    def work(image_id):
        return _match_image(dets[image_id], gts.get(image_id, ()), iou_threshold)

    if threads > 1 and len(image_ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(work, image_ids))
    else:
        per_image = [work(i) for i in image_ids]
    merged = [m for chunk in per_image for m in chunk]
    merged.sort(key=lambda m: (-m.confidence, m.image_id, m.order))
    return merged


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


def pr_curve(labeled: Sequence[MatchResult], total_gt: int) -> List[PRPoint]:
    """One point per distinct confidence, counting detections at or above it."""
    ordered = sorted(labeled, key=lambda m: -m.confidence)
    points = []
    tp = fp = 0
    for k, m in enumerate(ordered):
        if m.is_tp:
            tp += 1
        else:
            fp += 1
        last_of_group = k + 1 == len(ordered) or ordered[k + 1].confidence != m.confidence
        if last_of_group:
            recall = tp / total_gt if total_gt else 0.0
            points.append(PRPoint(m.confidence, tp / (tp + fp), recall))
    return points


def average_precision(
    labeled: Sequence[MatchResult], total_gt: int, interpolation: str = ALL_POINT
) -> Tuple[Optional[float], List[PRPoint]]:
    """Area under the interpolated precision/recall curve.

    Returns ``(None, [])`` when there is neither ground truth nor a detection
    (AP undefined for that class).
    """
    if total_gt < 0:
        raise ValueError("total_gt must be >= 0")
    points = pr_curve(labeled, total_gt)
    if total_gt == 0:
        return (None, points) if not labeled else (0.0, points)
    if not points:
        return 0.0, points

    recalls = [p.recall for p in points]
    precisions = [p.precision for p in points]
    # precision envelope, sweeping from high recall down
    envelope = precisions[:]
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])

    if interpolation == ALL_POINT:
        ap, prev_recall = 0.0, 0.0
        for r, p in zip(recalls, envelope):
            ap += (r - prev_recall) * p
            prev_recall = r
    elif interpolation == ELEVEN_POINT:
        ap = 0.0
        for t in range(11):
            level = t / 10
            ap += max((p for r, p in zip(recalls, precisions) if r >= level), default=0.0)
        ap /= 11
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return ap, points


def mean_average_precision(aps: Iterable[Optional[float]]) -> float:
    defined = [a for a in aps if a is not None]
    if not defined:
        raise ValueError("no class has a defined AP")
    return sum(defined) / len(defined)


@dataclass
class EvalReport:
    per_class_ap: Dict[int, Optional[float]]
    mean_ap: float
    pr_points: Dict[int, List[PRPoint]]
    tp: int
    fp: int
    total_gt: int
    iou_threshold: float
    interpolation: str = ALL_POINT
    num_images: int = 0
    matches: List[MatchResult] = field(default_factory=list, repr=False)

    @property
    def num_detections(self) -> int:
        return self.tp + self.fp


def evaluate(
    dets: Sequence[ScoredBox],
    gts: Mapping[str, Sequence[Tuple[int, Box]]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    interpolation: str = ALL_POINT,
    threads: int = 1,
) -> EvalReport:
    """Score detections against ground truth, class by class.

    ``gts`` maps image id to ``(class_id, corner box)`` pairs; every image that
    should count (including negatives) must appear as a key.
    """
    classes = sorted({d.class_id for d in dets} | {c for boxes in gts.values() for c, _ in boxes})
    per_class_ap: Dict[int, Optional[float]] = {}
    pr: Dict[int, List[PRPoint]] = {}
    tp = fp = total = 0
    all_matches: List[MatchResult] = []
    for cls in classes:
        cls_gts = {i: [b for c, b in boxes if c == cls] for i, boxes in gts.items()}
        cls_dets: Dict[str, List[ScoredBox]] = {}
        for d in dets:
            if d.class_id == cls:
                cls_dets.setdefault(d.image_id, []).append(d)
        n_gt = sum(len(v) for v in cls_gts.values())
        labeled = match_detections(cls_dets, cls_gts, iou_threshold, threads=threads)
        ap, points = average_precision(labeled, n_gt, interpolation)
        per_class_ap[cls] = ap
        pr[cls] = points
        tp += sum(m.is_tp for m in labeled)
        fp += sum(not m.is_tp for m in labeled)
        total += n_gt
        all_matches.extend(labeled)
    defined = [a for a in per_class_ap.values() if a is not None]
    mean_ap = mean_average_precision(defined) if defined else 0.0
    images = set(gts) | {d.image_id for d in dets}
    return EvalReport(per_class_ap, mean_ap, pr, tp, fp, total, iou_threshold, interpolation, len(images), all_matches)


def pr_csv(points: Sequence[PRPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "precision", "recall"])
    for p in points:
        writer.writerow([f"{p.threshold:.6f}", f"{p.precision:.6f}", f"{p.recall:.6f}"])
    return buf.getvalue()


def format_report(report: EvalReport) -> str:
    """Plain-text summary; AP is shown as a percentage with two decimals."""
    lines = [
        f"IoU threshold: {report.iou_threshold:.2f}",
        f"Interpolation: {report.interpolation}",
        f"Images: {report.num_images}",
        f"Ground-truth boxes: {report.total_gt}",
        f"Detections: {report.num_detections} (TP {report.tp}, FP {report.fp})",
    ]
    multi = len(report.per_class_ap) > 1
    for cls, ap in sorted(report.per_class_ap.items()):
        label = f"AP[class {cls}]" if multi else "AP"
        lines.append(f"{label}: {'n/a' if ap is None else f'{100 * ap:.2f}%'}")
    lines.append(f"mAP: {100 * report.mean_ap:.2f}%")
    return "\n".join(lines) + "\n"
