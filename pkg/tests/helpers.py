"""Builders shared by the tests: random weights, synthetic scenes."""

import json
import struct

import numpy as np

from handsoff.darknet import NetworkSpec, conv_input_channels
from handsoff.data_io import GroundTruthBox, format_annotation


def pack_header(major=0, minor=2, revision=0, seen=0):
    head = struct.pack("<3i", major, minor, revision)
    return head + struct.pack("<q" if major * 10 + minor >= 2 else "<i", seen)


def random_weights_bytes(spec: NetworkSpec, rng, scale=1.0, header=None):
    """Pack random parameters for every conv layer of ``spec``."""
    in_ch = conv_input_channels(spec)
    chunks = [header if header is not None else pack_header()]
    for layer in spec.conv_layers():
        n = layer.filters
        fan_in = in_ch[layer.index] * layer.size**2
        if layer.batch_normalize:
            chunks.append(rng.normal(0, 0.1, n).astype("<f4").tobytes())  # beta
            chunks.append(rng.uniform(0.5, 1.5, n).astype("<f4").tobytes())  # gamma
            chunks.append(rng.normal(0, 0.1, n).astype("<f4").tobytes())  # mean
            chunks.append(rng.uniform(0.5, 2.0, n).astype("<f4").tobytes())  # var
        else:
            chunks.append(rng.normal(0, 0.1, n).astype("<f4").tobytes())
        w = rng.normal(0, scale / np.sqrt(fan_in), n * fan_in)
        chunks.append(w.astype("<f4").tobytes())
    return b"".join(chunks)


def random_scene(rng, image_ids, max_gt=20, max_dets=50, size=(640, 480)):
    """Ground truth (pixel corner boxes) and noisy scored detections."""
    W, H = size
    gts, dets = {}, []
    order = 0
    for image_id in image_ids:
        boxes = []
        for _ in range(rng.integers(0, max_gt + 1)):
            w, h = rng.uniform(20, 200), rng.uniform(20, 200)
            x, y = rng.uniform(0, W - w), rng.uniform(0, H - h)
            boxes.append((x, y, x + w, y + h))
        gts[image_id] = boxes
        for _ in range(rng.integers(0, max_dets + 1)):
            if boxes and rng.random() < 0.6:
                x1, y1, x2, y2 = boxes[rng.integers(len(boxes))]
                j = rng.normal(0, 0.15 * (x2 - x1), 4)
                box = (x1 + j[0], y1 + j[1], x2 + j[2], y2 + j[3])
                if box[2] <= box[0] or box[3] <= box[1]:
                    continue
            else:
                w, h = rng.uniform(20, 200), rng.uniform(20, 200)
                x, y = rng.uniform(0, W - w), rng.uniform(0, H - h)
                box = (x, y, x + w, y + h)
            # coarse confidences so distinct detections share thresholds
            conf = float(np.round(rng.uniform(0.01, 1.0), 2))
            dets.append((image_id, conf, box, order))
            order += 1
    return gts, dets


def write_eval_suite(root, rng, n_images=12, size=(640, 480)):
    """Write a random scene as normalized GT files plus a detections file."""
    image_ids = [f"frame_{k:03d}" for k in range(n_images)]
    gts, dets = random_scene(rng, image_ids, size=size)
    W, H = size
    gt_dir = root / "gt"
    gt_dir.mkdir()
    for image_id, boxes in gts.items():
        norm = [
            GroundTruthBox(image_id, 0, (x1 + x2) / 2 / W, (y1 + y2) / 2 / H, (x2 - x1) / W, (y2 - y1) / H)
            for x1, y1, x2, y2 in boxes
        ]
        (gt_dir / f"{image_id}.txt").write_text(format_annotation(norm))
    lines = []
    for image_id, conf, (x1, y1, x2, y2), _ in dets:
        lines.append(json.dumps({
            "image_id": image_id, "class_id": 0, "cx": (x1 + x2) / 2, "cy": (y1 + y2) / 2,
            "w": x2 - x1, "h": y2 - y1, "objectness": conf, "class_score": 1.0, "confidence": conf,
        }))
    det_path = root / "dets.jsonl"
    det_path.write_text("\n".join(lines) + "\n")
    return gt_dir, det_path, gts, dets
