"""Streaming recognition: classify each trace's trailing window, emit gesture events."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .core import ConfigError, FrameObservation, SkeletonSpec
from .features import MOTION, window_sequence
from .network import TraceSeqModel, predict_proba_batched
from .tracking import TraceStore


@dataclass(frozen=True)
class TriggerConfig:
    threshold: float = 0.8
    consecutive: int = 3
    refractory: int = 30

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ConfigError(f"trigger threshold must lie in (0, 1), got {self.threshold}")
        if self.consecutive < 1 or self.refractory < 0:
            raise ConfigError("consecutive must be >= 1 and refractory >= 0")


@dataclass(frozen=True)
class GestureEvent:
    trace_id: int
    class_id: int
    frame: int
    probability: float

    def to_dict(self) -> dict:
        return {"trace_id": self.trace_id, "class": self.class_id, "frame": self.frame,
                "prob": self.probability}


class EventTrigger:
    """Per-trace debouncing of frame-level class probabilities.

    An event fires once the same non-negative class has scored above the
    threshold on ``consecutive`` back-to-back frames. The trace is then
    muted for ``refractory`` frames.
    """

    def __init__(self, config: TriggerConfig = TriggerConfig()):
        self.config = config
        self._state: dict[int, dict] = {}

    def update(self, trace_id: int, frame: int, probs) -> GestureEvent | None:
        cfg = self.config
        st = self._state.setdefault(trace_id, {"cls": None, "count": 0, "last": None,
                                               "mute_until": -1})
        if st["last"] is not None and frame != st["last"] + 1:
            st["cls"], st["count"] = None, 0
        st["last"] = frame
        probs = np.asarray(probs)
        cls = int(probs.argmax())
        p = float(probs[cls])
        if frame <= st["mute_until"] or cls == 0 or p <= cfg.threshold:
            st["cls"], st["count"] = None, 0
            return None
        if cls == st["cls"]:
            st["count"] += 1
        else:
            st["cls"], st["count"] = cls, 1
        if st["count"] < cfg.consecutive:
            return None
        st["cls"], st["count"] = None, 0
        st["mute_until"] = frame + cfg.refractory
        return GestureEvent(trace_id, cls, frame, p)

    def forget(self, trace_id: int) -> None:
        self._state.pop(trace_id, None)


def predict_stream(model: TraceSeqModel, frames: Iterable[FrameObservation],
                   skeleton: SkeletonSpec, trigger: TriggerConfig = TriggerConfig(),
                   t_obj: int = 13, mode: str = MOTION,
                   store: TraceStore | None = None) -> Iterator[GestureEvent]:
    """Track ``frames`` and yield gesture events as they trigger.

    Every trace updated on a frame and holding at least ``t_obj + 1``
    consecutive detections is classified on its trailing window.
    """
    store = store or TraceStore()
    trig = EventTrigger(trigger)
    for fr in frames:
        ev = store.step(fr)
        for tid in ev.terminated:
            trig.forget(tid)
        ids, windows = [], []
        for tid in sorted(set(ev.updated)):
            tr = store.active[tid]
            if len(tr.trailing_run()) < t_obj + 1:
                continue
            ids.append(tid)
            windows.append(window_sequence(tr, t_obj, skeleton, mode).values)
        if not ids:
            continue
        probs = predict_proba_batched(model, np.stack(windows))
        for tid, p in zip(ids, probs):
            event = trig.update(tid, fr.frame_index, p)
            if event is not None:
                yield event
