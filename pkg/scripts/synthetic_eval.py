"""AP of synthetic detectors as localization noise and IoU threshold vary.

Writes one synthetic collection per noise level (normalized ground truth plus
JSON-lines detections, the same files ``handsoff eval`` reads) and prints an
AP table. Useful for seeing how sensitive the metric is to box jitter.

    python scripts/synthetic_eval.py --out runs/synthetic --images 50
"""

import argparse
import io
from pathlib import Path

import numpy as np

from handsoff.data_io import GroundTruthBox, format_annotation, write_detections
from handsoff.metrics import ScoredBox, evaluate
from handsoff.postprocess import Detection


def make_collection(rng, n_images, noise, size, miss_rate=0.1, fp_rate=0.3):
    W, H = size
    gts, dets = {}, []
    for k in range(n_images):
        image_id = f"frame_{k:04d}"
        boxes = []
        for _ in range(rng.poisson(1.5)):
            w, h = rng.uniform(40, 200), rng.uniform(40, 200)
            x, y = rng.uniform(0, W - w), rng.uniform(0, H - h)
            boxes.append((x, y, x + w, y + h))
        gts[image_id] = boxes
        for x1, y1, x2, y2 in boxes:
            if rng.random() < miss_rate:
                continue
            j = rng.normal(0, noise, 4) * np.array([x2 - x1, y2 - y1, x2 - x1, y2 - y1])
            bx1, by1, bx2, by2 = x1 + j[0], y1 + j[1], x2 + j[2], y2 + j[3]
            if bx2 > bx1 and by2 > by1:
                conf = float(np.clip(rng.normal(0.75, 0.15), 0.01, 1.0))
                dets.append(Detection((bx1 + bx2) / 2, (by1 + by2) / 2, bx2 - bx1, by2 - by1, conf, 1.0, conf, 0, image_id))
        for _ in range(rng.poisson(fp_rate)):
            w, h = rng.uniform(40, 200), rng.uniform(40, 200)
            conf = float(np.clip(rng.normal(0.4, 0.15), 0.01, 1.0))
            dets.append(Detection(rng.uniform(w / 2, W - w / 2), rng.uniform(h / 2, H - h / 2), w, h, conf, 1.0, conf, 0, image_id))
    return gts, dets


def save_collection(root: Path, gts, dets, size):
    W, H = size
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for image_id, boxes in gts.items():
        norm = [GroundTruthBox(image_id, 0, (a + c) / 2 / W, (b + d) / 2 / H, (c - a) / W, (d - b) / H) for a, b, c, d in boxes]
        (root / "gt" / f"{image_id}.txt").write_text(format_annotation(norm))
    buf = io.StringIO()
    write_detections(dets, buf)
    (root / "detections.jsonl").write_text(buf.getvalue())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, help="write each collection under this directory")
    parser.add_argument("--images", type=int, default=50)
    parser.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.05, 0.1, 0.2, 0.3])
    parser.add_argument("--iou", type=float, nargs="+", default=[0.5, 0.75])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    size = (640, 480)
    rng = np.random.default_rng(args.seed)
    print("noise  " + "  ".join(f"AP@{t:.2f}" for t in args.iou))
    for noise in args.noise:
        gts, dets = make_collection(rng, args.images, noise, size)
        if args.out:
            save_collection(args.out / f"noise_{noise:.2f}", gts, dets, size)
        scored = [ScoredBox(d.image_id, d.confidence, d.corners, 0, k) for k, d in enumerate(dets)]
        gt_boxes = {i: [(0, b) for b in boxes] for i, boxes in gts.items()}
        aps = [evaluate(scored, gt_boxes, iou_threshold=t).mean_ap for t in args.iou]
        print(f"{noise:5.2f}  " + "  ".join(f"{100 * a:7.2f}" for a in aps))


if __name__ == "__main__":
    main()
