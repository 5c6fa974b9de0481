"""``handsoff`` command line: detect, eval, stream, bench, inspect.

Settings resolve as command-line flag, then ``HANDSOFF_*`` environment
variable, then built-in default:

    flag              env var                   default
    --cfg             HANDSOFF_CFG              bundled yolov3-handshake.cfg
    --weights         HANDSOFF_WEIGHTS          (required where a model runs)
    --conf-thresh     HANDSOFF_CONF_THRESH      0.25
    --nms-thresh      HANDSOFF_NMS_THRESH       0.45
    --iou             HANDSOFF_IOU              0.5
    --letterbox       HANDSOFF_LETTERBOX        off
    --threads         HANDSOFF_THREADS          1
    --debounce-open   HANDSOFF_DEBOUNCE_OPEN    3
    --debounce-close  HANDSOFF_DEBOUNCE_CLOSE   5

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import darknet
from .data_io import (
    frames_from_paths,
    image_size,
    list_frames,
    load_detections,
    load_ground_truth,
    load_image,
    natural_key,
    render_overlay,
    save_image,
    write_detections,
    IMAGE_SUFFIXES,
)
from .errors import EvaluationError, HandsOffError, InvariantViolation
from .events import EventAggregator
from .metrics import ALL_POINT, ELEVEN_POINT, ScoredBox, evaluate, format_report, pr_csv
from .pipeline import Detector, benchmark, run_frames

log = logging.getLogger("handsoff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
ENV_PREFIX = "HANDSOFF_"

# name -> (type, default)
SETTINGS = {
    "cfg": (str, None),
    "weights": (str, None),
    "conf_thresh": (float, 0.25),
    "nms_thresh": (float, 0.45),
    "iou": (float, 0.5),
    "letterbox": (bool, False),
    "threads": (int, 1),
    "debounce_open": (int, 3),
    "debounce_close": (int, 5),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(text)


def resolve_settings(args: argparse.Namespace, environ: Optional[Dict[str, str]] = None) -> argparse.Namespace:
    """Fill unset flags from the environment, then from defaults."""
    environ = os.environ if environ is None else environ
    for name, (kind, default) in SETTINGS.items():
        if not hasattr(args, name):
            continue
        if getattr(args, name) is not None:
            continue
        env_name = ENV_PREFIX + name.upper()
        if env_name in environ:
            raw = environ[env_name]
            try:
                value = _parse_bool(raw) if kind is bool else kind(raw)
            except ValueError:
                raise UsageError(f"{env_name}={raw!r} is not a valid {kind.__name__}")
        else:
            value = default
        setattr(args, name, value)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        raise UsageError("--threads must be >= 1")
    return args


# ---------------------------------------------------------------------------


def _load_spec(args):
    if args.cfg:
        return darknet.load_config(args.cfg)
    return darknet.parse_config(darknet.reference_config_text())


def _load_detector(args) -> Detector:
    if not args.weights:
        raise UsageError("--weights (or HANDSOFF_WEIGHTS) is required")
    spec = _load_spec(args)
    net = darknet.load_weights_file(spec, args.weights)
    return Detector(net, args.conf_thresh, args.nms_thresh, args.letterbox)


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _load_frame(frame):
    return load_image(frame.path), frame.image_id


def cmd_detect(args) -> int:
    detector = _load_detector(args)
    frames = list_frames(args.input)
    if not frames:
        log.warning("no images found in %s", args.input)
    results = run_frames(detector, frames, _load_frame, threads=args.threads)
    with _open_out(args.output) as out:
        for dets in results:
            write_detections(dets, out)
    if args.render:
        render_dir = Path(args.render)
        render_dir.mkdir(parents=True, exist_ok=True)
        gts = load_ground_truth(args.gt, [f.image_id for f in frames]) if args.gt else {}
        for frame, dets in zip(frames, results):
            overlay = render_overlay(load_image(frame.path), dets, gts.get(frame.image_id))
            save_image(overlay, render_dir / f"{frame.image_id}{args.render_suffix}.png")
    log.info("%d frames, %d detections", len(frames), sum(len(d) for d in results))
    return EXIT_OK


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise UsageError(f"--image-size expects WxH, got {text!r}")
    if w < 1 or h < 1:
        raise UsageError("--image-size must be positive")
    return w, h


def _image_sizes(args, image_ids: Sequence[str]):
    if args.image_size:
        size = _parse_size(args.image_size)
        return {i: size for i in image_ids}
    if not args.images:
        raise UsageError("eval needs --image-size WxH or --images DIR to relate pixel detections to normalized ground truth")
    by_stem = {}
    for p in Path(args.images).iterdir():
        if p.suffix.lower() in IMAGE_SUFFIXES:
            by_stem.setdefault(p.stem, p)
    sizes = {}
    for i in image_ids:
        if i not in by_stem:
            raise EvaluationError(f"no image for id {i!r} in {args.images}")
        sizes[i] = image_size(by_stem[i])
    return sizes


def cmd_eval(args) -> int:
    detections = load_detections(args.detections)
    gt_dir = Path(args.gt)
    gt_ids = sorted((p.stem for p in gt_dir.glob("*.txt")), key=natural_key) if gt_dir.is_dir() else []
    det_ids = {d.image_id for d in detections}
    if not set(gt_ids) & det_ids:
        if not detections:
            raise EvaluationError("detections file is empty")
        raise EvaluationError(f"no image ids shared between {args.gt} and {args.detections}")
    image_ids = sorted(set(gt_ids) | det_ids, key=natural_key)
    gts = load_ground_truth(args.gt, image_ids)
    sizes = _image_sizes(args, image_ids)
    gt_boxes = {i: [(b.class_id, b.to_pixels(*sizes[i])) for b in boxes] for i, boxes in gts.items()}
    scored = [ScoredBox(d.image_id, d.confidence, d.corners, d.class_id, k) for k, d in enumerate(detections)]
    report = evaluate(scored, gt_boxes, args.iou, args.interpolation, threads=args.threads)
    sys.stdout.write(format_report(report))
    if args.pr_csv:
        classes = sorted(report.pr_points)
        for cls in classes:
            path = Path(args.pr_csv)
            if len(classes) > 1:
                path = path.with_name(f"{path.stem}.class{cls}{path.suffix}")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(pr_csv(report.pr_points[cls]), encoding="utf-8")
    return EXIT_OK


def cmd_stream(args) -> int:
    detector = _load_detector(args)
    if args.input == "-":
        paths = [line.strip() for line in sys.stdin if line.strip()]
        frames = frames_from_paths(paths, check_order=True)
    else:
        frames = list_frames(args.input)
        frames = frames_from_paths([f.path for f in frames], check_order=True)
    agg = EventAggregator(args.debounce_open, args.debounce_close)
    results = run_frames(detector, frames, _load_frame, threads=args.threads)
    n_events = 0
    with _open_out(args.output) as out, _open_out(args.detections_out) if args.detections_out else contextlib.nullcontext() as det_out:
        for frame, dets in zip(frames, results):
            if det_out is not None:
                write_detections(dets, det_out)
            event = agg.push(frame.frame_index, dets)
            if event is not None:
                out.write(json.dumps(event.to_dict()) + "\n")
                n_events += 1
        event = agg.finish()
        if event is not None:
            out.write(json.dumps(event.to_dict()) + "\n")
            n_events += 1
    log.info("%d frames, %d events", len(frames), n_events)
    return EXIT_OK


def cmd_bench(args) -> int:
    detector = _load_detector(args)
    if args.input:
        frames = [load_image(f.path) for f in list_frames(args.input)]
        if not frames:
            raise HandsOffError(f"no images found in {args.input}")
    else:
        w, h = detector.network.input_size
        frames = [np.random.default_rng(0).integers(0, 256, size=(h, w, 3), dtype=np.uint8)]
    report = benchmark(detector, frames, runs=args.runs, warmup=args.warmup)
    sys.stdout.write(report.format_text())
    payload = report.to_dict()
    if not args.samples:
        payload.pop("samples")
    text = json.dumps(payload)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def cmd_inspect(args) -> int:
    spec = _load_spec(args)
    target = darknet.load_weights_file(spec, args.weights) if args.weights else spec
    sys.stdout.write(darknet.inspect(target))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="handsoff", description="Single-class YOLOv3 handshake detector and evaluator.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def model_args(p, with_weights=True):
        p.add_argument("--cfg", help="network description (default: bundled reference)")
        if with_weights:
            p.add_argument("--weights", help="darknet weights file")
            p.add_argument("--conf-thresh", type=float)
            p.add_argument("--nms-thresh", type=float)
            p.add_argument("--letterbox", action=argparse.BooleanOptionalAction, default=None)
            p.add_argument("--threads", type=int)

    p = sub.add_parser("detect", help="run the detector over frames")
    model_args(p)
    p.add_argument("--input", required=True, help="image file or directory of frames")
    p.add_argument("--output", "-o", default="-", help="detections JSON-lines (default stdout)")
    p.add_argument("--render", metavar="DIR", help="write overlay images here")
    p.add_argument("--render-suffix", default="_det")
    p.add_argument("--gt", metavar="DIR", help="ground truth to draw on overlays")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--gt", required=True, metavar="DIR")
    p.add_argument("--detections", required=True)
    p.add_argument("--iou", type=float)
    p.add_argument("--pr-csv", metavar="PATH")
    p.add_argument("--image-size", metavar="WxH")
    p.add_argument("--images", metavar="DIR")
    p.add_argument("--interpolation", choices=(ALL_POINT, ELEVEN_POINT), default=ALL_POINT)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="aggregate per-frame detections into interaction events")
    model_args(p)
    p.add_argument("--input", required=True, help="directory of frames, or '-' for a path list on stdin")
    p.add_argument("--output", "-o", default="-", help="events JSON-lines (default stdout)")
    p.add_argument("--detections-out", metavar="PATH")
    p.add_argument("--debounce-open", type=int)
    p.add_argument("--debounce-close", type=int)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="time the pipeline stages")
    model_args(p)
    p.add_argument("--input", help="frames to cycle through (default: one random frame)")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--json", metavar="PATH")
    p.add_argument("--samples", action="store_true", help="include raw per-run timings in the JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print the layer table")
    p.add_argument("--cfg")
    p.add_argument("--weights")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None, environ: Optional[Dict[str, str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        resolve_settings(args, environ)
        if getattr(args, "debounce_open", 1) < 1 or getattr(args, "debounce_close", 1) < 1:
            raise UsageError("debounce counts must be >= 1")
        if hasattr(args, "runs") and (args.runs < 1 or args.warmup < 0):
            raise UsageError("--runs must be >= 1 and --warmup >= 0")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HandsOffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
