"""Debounced interaction events over a stream of per-frame detections.

An event opens once ``open_after`` consecutive frames each hold a detection
(its start is the first frame of that run) and closes after ``close_after``
consecutive empty frames (its end is the last frame with a detection). Only
presence matters; boxes are not tracked across frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Tuple

from .data_io import detection_to_dict
from .errors import FrameOrderError
from .postprocess import Detection

DEFAULT_OPEN_AFTER = 3
DEFAULT_CLOSE_AFTER = 5


@dataclass(frozen=True)
class InteractionEvent:
    start_frame: int
    end_frame: int
    peak_confidence: float
    representative_box: Detection

    @property
    def frame_count(self) -> int:
        return self.end_frame - self.start_frame + 1

    def to_dict(self) -> dict:
        return {
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "frame_count": self.frame_count,
            "peak_confidence": round(self.peak_confidence, 6),
            "representative_box": detection_to_dict(self.representative_box),
        }


class EventAggregator:
    def __init__(self, open_after: int = DEFAULT_OPEN_AFTER, close_after: int = DEFAULT_CLOSE_AFTER):
        if open_after < 1 or close_after < 1:
            raise ValueError("debounce counts must be >= 1")
        self.open_after = open_after
        self.close_after = close_after
        self._last_index: Optional[int] = None
        self._reset()

    def _reset(self):
        self._run_start: Optional[int] = None
        self._run_len = 0
        self._best: Optional[Detection] = None
        self._open = False
        self._last_positive: Optional[int] = None
        self._empty_streak = 0

    def _emit(self) -> InteractionEvent:
        event = InteractionEvent(self._run_start, self._last_positive, self._best.confidence, self._best)
        self._reset()
        return event

    def push(self, frame_index: int, dets: Sequence[Detection]) -> Optional[InteractionEvent]:
        """Feed one frame; returns an event when this frame closes one."""
        if self._last_index is not None and frame_index <= self._last_index:
            kind = "duplicate" if frame_index == self._last_index else "out-of-order"
            raise FrameOrderError(f"{kind} frame index {frame_index} after {self._last_index}")
        self._last_index = frame_index

        if dets:
            top = max(dets, key=lambda d: d.confidence)
            if not self._open and self._run_len == 0:
                self._run_start = frame_index
                self._best = None
            if self._best is None or top.confidence > self._best.confidence:
                self._best = top
            self._last_positive = frame_index
            self._empty_streak = 0
            if not self._open:
                self._run_len += 1
                if self._run_len >= self.open_after:
                    self._open = True
            return None

        if self._open:
            self._empty_streak += 1
            if self._empty_streak >= self.close_after:
                return self._emit()
        else:
            self._run_len = 0
        return None

    def finish(self) -> Optional[InteractionEvent]:
        """Flush an event still open at the end of the stream."""
        return self._emit() if self._open else None


def aggregate_events(
    frames: Iterable[Tuple[int, Sequence[Detection]]],
    open_after: int = DEFAULT_OPEN_AFTER,
    close_after: int = DEFAULT_CLOSE_AFTER,
) -> Iterator[InteractionEvent]:
    agg = EventAggregator(open_after, close_after)
    for index, dets in frames:
        event = agg.push(index, dets)
        if event is not None:
            yield event
    event = agg.finish()
    if event is not None:
        yield event
