"""Independent reference implementations used as test oracles.

Everything here is deliberately naive plain Python (lists, loops, ``math``)
and shares no code with the package paths it checks.
"""

import itertools
import math
import struct


# --- convolution -----------------------------------------------------------


def naive_conv2d(x, weights, bias, stride, pad):
    """x: nested [C][H][W]; weights: nested [O][C][K][K]; returns [O][H'][W'] in float64."""
    C, H, W = len(x), len(x[0]), len(x[0][0])
    O, K = len(weights), len(weights[0][0])
    out_h = (H + 2 * pad - K) // stride + 1
    out_w = (W + 2 * pad - K) // stride + 1
    out = [[[0.0] * out_w for _ in range(out_h)] for _ in range(O)]
    for o in range(O):
        for y in range(out_h):
            for xx in range(out_w):
                acc = float(bias[o])
                for c in range(C):
                    for dy in range(K):
                        for dx in range(K):
                            iy = y * stride + dy - pad
                            ix = xx * stride + dx - pad
                            if 0 <= iy < H and 0 <= ix < W:
                                acc += float(weights[o][c][dy][dx]) * float(x[c][iy][ix])
                out[o][y][xx] = acc
    return out


# --- NMS ---------------------------------------------------------------------


def corner_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / ua


def brute_force_nms(boxes, scores, threshold):
    """Search all subsets for the unique greedy fixed point.

    With priority order (score desc, index asc), the greedy result S is the
    only subset in which every box is present exactly when it overlaps no
    higher-priority member of S by more than ``threshold``. Returns indices
    in priority order.
    """
    n = len(boxes)
    priority = sorted(range(n), key=lambda k: (-scores[k], k))
    rank = {k: r for r, k in enumerate(priority)}
    solutions = []
    for size in range(n + 1):
        for subset in itertools.combinations(range(n), size):
            chosen = set(subset)
            ok = True
            for k in range(n):
                blocked = any(
                    rank[j] < rank[k] and corner_iou(boxes[j], boxes[k]) > threshold for j in chosen
                )
                if (k in chosen) == blocked:
                    ok = False
                    break
            if ok:
                solutions.append(sorted(chosen, key=lambda k: rank[k]))
    assert len(solutions) == 1, solutions
    return solutions[0]


# --- average precision -----------------------------------------------------


def sweep_ap(confidences, is_tp, total_gt):
    """AP by sweeping each distinct threshold and counting directly, then
    integrating the precision envelope over recall."""
    if total_gt == 0:
        return None if not confidences else 0.0
    points = []
    for t in sorted(set(confidences), reverse=True):
        tp = sum(1 for c, y in zip(confidences, is_tp) if c >= t and y)
        fp = sum(1 for c, y in zip(confidences, is_tp) if c >= t and not y)
        points.append((tp / total_gt, tp / (tp + fp)))
    if not points:
        return 0.0
    recalls = sorted(set(r for r, _ in points))
    area = 0.0
    prev = 0.0
    for r in recalls:
        p_interp = max(p for rr, p in points if rr >= r)
        area += (r - prev) * p_interp
        prev = r
    return area


def exhaustive_matching(dets, gts, threshold):
    """Greedy VOC matching on one image via explicit bookkeeping sets.

    dets: list of (confidence, box) in the tie-broken visiting order.
    """
    free = set(range(len(gts)))
    labels = []
    for _, box in dets:
        candidates = [(corner_iou(box, gts[g]), -g) for g in free]
        if candidates:
            best_iou, neg_g = max(candidates)
            if best_iou >= threshold and best_iou > 0:
                free.discard(-neg_g)
                labels.append(True)
                continue
        labels.append(False)
    return labels


# --- events ----------------------------------------------------------------


def run_events(pattern, k_open, m_close):
    """Events from a 0/1 frame pattern by merging runs of positives."""
    runs = []
    i = 0
    while i < len(pattern):
        if pattern[i]:
            j = i
            while j + 1 < len(pattern) and pattern[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    events = []
    r = 0
    while r < len(runs):
        start, end = runs[r]
        if end - start + 1 < k_open:
            r += 1
            continue
        r += 1
        while r < len(runs) and runs[r][0] - end - 1 < m_close:
            end = runs[r][1]
            r += 1
        events.append((start, end))
    return events


# --- tiny end-to-end network ---------------------------------------------------


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def _read_floats(buf, offset, n):
    vals = list(struct.unpack_from(f"<{n}f", buf, offset))
    return vals, offset + 4 * n


def _bilinear(img, out_h, out_w):
    in_h, in_w = len(img), len(img[0])
    out = []
    for y in range(out_h):
        sy = min(max((y + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        fy = sy - y0
        row = []
        for x in range(out_w):
            sx = min(max((x + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            fx = sx - x0
            px = []
            for c in range(len(img[0][0])):
                top = img[y0][x0][c] * (1 - fx) + img[y0][x1][c] * fx
                bot = img[y1][x0][c] * (1 - fx) + img[y1][x1][c] * fx
                px.append(top * (1 - fy) + bot * fy)
            row.append(px)
        out.append(row)
    return out


def tiny_network_head(weights_bytes, image, eps=1e-5):
    """Head tensor [18][4][4] of the five-layer fixture network, from scratch.

    image: nested [H][W][3] of 0..255 ints.
    """
    buf = bytes(weights_bytes)
    major, minor, _ = struct.unpack_from("<3i", buf, 0)
    off = 20 if major * 10 + minor >= 2 else 16

    def conv_block(in_c, out_c, k, bn):
        nonlocal off
        if bn:
            beta, off = _read_floats(buf, off, out_c)
            gamma, off = _read_floats(buf, off, out_c)
            mean, off = _read_floats(buf, off, out_c)
            var, off = _read_floats(buf, off, out_c)
            bias = [0.0] * out_c
            norm = (gamma, beta, mean, var)
        else:
            bias, off = _read_floats(buf, off, out_c)
            norm = None
        flat, off = _read_floats(buf, off, out_c * in_c * k * k)
        w = [[[[flat[((o * in_c + c) * k + dy) * k + dx] for dx in range(k)] for dy in range(k)] for c in range(in_c)] for o in range(out_c)]
        return w, bias, norm

    w0, b0, n0 = conv_block(3, 4, 3, True)
    w1, b1, _ = conv_block(4, 4, 1, False)
    w3, b3, _ = conv_block(4, 18, 3, False)
    assert off == len(buf)

    net = 8
    scaled = [[[v / 255.0 for v in px] for px in row] for row in image]
    resized = _bilinear(scaled, net, net)
    x = [[[resized[y][xx][c] for xx in range(net)] for y in range(net)] for c in range(3)]

    l0 = naive_conv2d(x, w0, b0, 1, 1)
    gamma, beta, mean, var = n0
    for c in range(4):
        for y in range(net):
            for xx in range(net):
                v = gamma[c] * (l0[c][y][xx] - mean[c]) / math.sqrt(var[c] + eps) + beta[c]
                l0[c][y][xx] = v if v >= 0 else 0.1 * v
    l1 = naive_conv2d(l0, w1, b1, 1, 0)
    l2 = [[[l1[c][y][xx] + l0[c][y][xx] for xx in range(net)] for y in range(net)] for c in range(4)]
    head = naive_conv2d(l2, w3, b3, 2, 1)
    return head


def tiny_network_detections(weights_bytes, image, conf_threshold, nms_threshold, eps=1e-5):
    """Detections for the five-layer fixture network.

    Returns dicts with source-pixel cx, cy, w, h and scores, in descending
    confidence.
    """
    head = tiny_network_head(weights_bytes, image, eps)
    src_h, src_w = len(image), len(image[0])
    net = 8
    anchors = [(3, 4), (6, 5), (9, 9)]
    grid = len(head[0])
    stride = net / grid
    cands = []
    for i in range(grid):
        for j in range(grid):
            for a in range(3):
                t = [head[a * 6 + k][i][j] for k in range(6)]
                obj, cls = _sigmoid(t[4]), _sigmoid(t[5])
                conf = obj * cls
                if conf < conf_threshold:
                    continue
                cands.append(
                    {
                        "cx": (_sigmoid(t[0]) + j) * stride,
                        "cy": (_sigmoid(t[1]) + i) * stride,
                        "w": anchors[a][0] * math.exp(min(t[2], 10.0)),
                        "h": anchors[a][1] * math.exp(min(t[3], 10.0)),
                        "objectness": obj,
                        "class_score": cls,
                        "confidence": conf,
                    }
                )
    cands.sort(key=lambda d: -d["confidence"])
    kept = []
    for d in cands:
        box = (d["cx"] - d["w"] / 2, d["cy"] - d["h"] / 2, d["cx"] + d["w"] / 2, d["cy"] + d["h"] / 2)
        if all(corner_iou(box, k["_box"]) <= nms_threshold for k in kept):
            d["_box"] = box
            kept.append(d)

    out = []
    sx, sy = src_w / net, src_h / net
    for d in kept:
        x1, y1, x2, y2 = d["_box"]
        x1, x2 = min(max(x1 * sx, 0.0), src_w), min(max(x2 * sx, 0.0), src_w)
        y1, y2 = min(max(y1 * sy, 0.0), src_h), min(max(y2 * sy, 0.0), src_h)
        if x2 <= x1 or y2 <= y1:
            continue
        out.append(
            {
                "cx": (x1 + x2) / 2,
                "cy": (y1 + y2) / 2,
                "w": x2 - x1,
                "h": y2 - y1,
                "objectness": d["objectness"],
                "class_score": d["class_score"],
                "confidence": d["confidence"],
            }
        )
    return out


def scene_ap(gts, dets, threshold):
    """AP of a synthetic scene, from exhaustive matching and a threshold sweep.

    gts: {image_id: [corner boxes]}; dets: [(image_id, conf, box, order)].
    """
    confidences, labels = [], []
    for image_id, boxes in gts.items():
        mine = sorted((d for d in dets if d[0] == image_id), key=lambda d: (-d[1], d[3]))
        labels.extend(exhaustive_matching([(d[1], d[2]) for d in mine], boxes, threshold))
        confidences.extend(d[1] for d in mine)
    total = sum(len(b) for b in gts.values())
    return sweep_ap(confidences, labels, total)
