"""Frame-level detection (preprocess -> forward -> postprocess) and timing."""

from __future__ import annotations

import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .darknet import ParameterizedNetwork
from .engine import Network, preprocess
from .postprocess import DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_THRESHOLD, Detection, postprocess


class Detector:
    def __init__(
        self,
        net: ParameterizedNetwork,
        conf_threshold: float = DEFAULT_CONF_THRESHOLD,
        nms_threshold: float = DEFAULT_NMS_THRESHOLD,
        letterbox: bool = False,
        network: Optional[Network] = None,
    ):
        self.net = net
        self.network = network or Network(net)
        self.conf_threshold = conf_threshold
        self.nms_threshold = nms_threshold
        self.letterbox = letterbox

    def clone(self) -> "Detector":
        """A detector sharing these weights but with its own execution state."""
        return Detector(self.net, self.conf_threshold, self.nms_threshold, self.letterbox, self.network.clone())

    def detect(self, image: np.ndarray, image_id: str = "") -> List[Detection]:
        w, h = self.network.input_size
        x, record = preprocess(image, w, h, letterbox=self.letterbox)
        heads = self.network.forward(x)
        return postprocess(heads, record, self.conf_threshold, self.nms_threshold, image_id)


def run_frames(
    detector: Detector,
    items: Sequence,
    load: Callable[[object], Tuple[np.ndarray, str]],
    threads: int = 1,
) -> List[List[Detection]]:
    """Detect on every item; results come back in input order whatever ``threads`` is.

    ``load`` turns an item into ``(image, image_id)``. Each worker thread gets
    its own detector clone.
    """
    if threads <= 1 or len(items) <= 1:
        return [detector.detect(*load(item)) for item in items]
    local = threading.local()

    def work(item):
        if not hasattr(local, "detector"):
            local.detector = detector.clone()
        return local.detector.detect(*load(item))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, items))


@dataclass
class StageStats:
    mean: float
    median: float
    std: float

    @classmethod
    def of(cls, samples: Sequence[float]) -> "StageStats":
        return cls(statistics.fmean(samples), statistics.median(samples), statistics.pstdev(samples))


@dataclass
class BenchmarkReport:
    runs: int
    warmup: int
    input_size: Tuple[int, int]
    stages: Dict[str, StageStats]
    fps: float
    samples: Dict[str, List[float]] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    def format_text(self) -> str:
        lines = [
            f"runs: {self.runs} (warmup {self.warmup}), input {self.input_size[0]}x{self.input_size[1]}",
            f"{'stage':<12} {'mean ms':>10} {'median ms':>10} {'std ms':>10}",
        ]
        for name, s in self.stages.items():
            lines.append(f"{name:<12} {1e3 * s.mean:>10.3f} {1e3 * s.median:>10.3f} {1e3 * s.std:>10.3f}")
        lines.append(f"fps: {self.fps:.2f}")
        return "\n".join(lines) + "\n"


STAGES = ("preprocess", "forward", "postprocess", "total")


def benchmark(detector: Detector, frames: Sequence[np.ndarray], runs: int = 50, warmup: int = 5) -> BenchmarkReport:
    """Time each pipeline stage over ``runs`` passes after ``warmup`` untimed passes.

    Frames are cycled. Standard deviations are population values, so a single
    run reports 0.
    """
    if not frames:
        raise ValueError("benchmark needs at least one frame")
    if runs < 1 or warmup < 0:
        raise ValueError("runs must be >= 1 and warmup >= 0")
    network = detector.network
    w, h = network.input_size
    samples: Dict[str, List[float]] = {s: [] for s in STAGES}
    clock = time.perf_counter
    for k in range(warmup + runs):
        image = frames[k % len(frames)]
        t0 = clock()
        x, record = preprocess(image, w, h, letterbox=detector.letterbox)
        t1 = clock()
        heads = network.forward(x)
        t2 = clock()
        postprocess(heads, record, detector.conf_threshold, detector.nms_threshold)
        t3 = clock()
        if k >= warmup:
            samples["preprocess"].append(t1 - t0)
            samples["forward"].append(t2 - t1)
            samples["postprocess"].append(t3 - t2)
            samples["total"].append(t3 - t0)
    stages = {name: StageStats.of(values) for name, values in samples.items()}
    mean_total = stages["total"].mean
    fps = 1.0 / mean_total if mean_total > 0 else float("inf")
    return BenchmarkReport(runs, warmup, (w, h), stages, fps, samples)
