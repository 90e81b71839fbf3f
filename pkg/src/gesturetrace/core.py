"""Shared domain types: skeletons, boxes, detections, frames and traces.

All geometry lives in normalized image coordinates, so a keypoint at the
image center is ``(0.5, 0.5)`` whatever the capture resolution.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class GestureTraceError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(GestureTraceError, ValueError):
    pass


class SchemaError(GestureTraceError, ValueError):
    pass


class ConfigError(GestureTraceError, ValueError):
    pass


class StreamOrderError(GestureTraceError, ValueError):
    pass


class NumericInputError(GestureTraceError, ValueError):
    pass


class WindowUnderflowError(GestureTraceError, ValueError):
    """Raised when a history is too short for the requested window."""

    def __init__(self, message: str, shortfall: int):
        super().__init__(message)
        self.shortfall = shortfall


# ---------------------------------------------------------------------------
# skeleton and labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonSpec:
    keypoint_count: int
    edges: tuple[tuple[int, int], ...]
    name: str = "skeleton"

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def to_dict(self) -> dict:
        return {"name": self.name, "keypoint_count": self.keypoint_count,
                "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        try:
            return validate_skeleton(cls(int(d["keypoint_count"]),
                                         tuple(tuple(e) for e in d["edges"]),
                                         str(d.get("name", "skeleton"))))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed skeleton: {exc}") from exc


def validate_skeleton(skel: SkeletonSpec) -> SkeletonSpec:
    """Return ``skel`` unchanged if its invariants hold, else raise SchemaError."""
    k = skel.keypoint_count
    if k <= 0:
        raise SchemaError(f"keypoint_count must be positive, got {k}")
    if k >= 2 and not skel.edges:
        raise SchemaError("edges: empty edge set")
    seen = set()
    for a, b in skel.edges:
        for idx in (a, b):
            if not 0 <= idx < k:
                raise SchemaError(f"edges: edge index {idx} out of range for keypoint_count {k}")
        if a == b:
            raise SchemaError(f"edges: self-loop on keypoint {a}")
        key = frozenset((a, b))
        if key in seen:
            raise SchemaError(f"edges: duplicate edge ({a}, {b})")
        seen.add(key)
    return skel


# wrist + thumb, index, middle, pinky tips
DEFAULT_SKELETON = SkeletonSpec(5, ((0, 1), (0, 2), (0, 3), (0, 4)), "wrist_tips5")


@dataclass(frozen=True)
class GestureLabel:
    class_id: int
    name: str


DEFAULT_LABELS: tuple[GestureLabel, ...] = (
    GestureLabel(0, "negative"),
    GestureLabel(1, "left_wave"),
    GestureLabel(2, "right_wave"),
)


def validate_labels(labels: Sequence[GestureLabel]) -> tuple[GestureLabel, ...]:
    ids = [lab.class_id for lab in labels]
    if sorted(ids) != list(range(len(ids))):
        raise SchemaError(f"label ids must be dense and unique from 0, got {ids}")
    out = tuple(sorted(labels, key=lambda lab: lab.class_id))
    if out[0].name != "negative":
        raise SchemaError("class 0 is reserved for 'negative'")
    return out


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

_BOX_LO, _BOX_HI = -0.5, 1.5


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center/extent form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(vals)):
            raise InvalidInputError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"degenerate box with extents ({self.w}, {self.h})")

    @classmethod
    def clamped(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        """Build a box, clamping it into the admissible [-0.5, 1.5] range."""
        x1 = min(max(cx - w / 2, _BOX_LO), _BOX_HI)
        x2 = min(max(cx + w / 2, _BOX_LO), _BOX_HI)
        y1 = min(max(cy - h / 2, _BOX_LO), _BOX_HI)
        y2 = min(max(cy + h / 2, _BOX_LO), _BOX_HI)
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls.clamped((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.w, self.h))

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


def _frozen_array(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HandDetection:
    """One frame's observation of one hand."""

    box: BoundingBox
    keypoints: np.ndarray  # (K, 2) normalized (u, v)
    confidence: float
    frame_index: int
    source_id: int | None = None

    def __post_init__(self):
        kp = self.keypoints
        if not isinstance(kp, np.ndarray) or kp.flags.writeable:
            kp = _frozen_array(kp)
            object.__setattr__(self, "keypoints", kp)
        if kp.ndim != 2 or kp.shape[1] != 2:
            raise SchemaError(f"keypoints must have shape (K, 2), got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise InvalidInputError("non-finite keypoint coordinates")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.frame_index < 0:
            raise InvalidInputError(f"frame_index must be non-negative, got {self.frame_index}")

    @property
    def keypoint_count(self) -> int:
        return self.keypoints.shape[0]

    def same_geometry(self, other: "HandDetection") -> bool:
        return (self.box.as_tuple() == other.box.as_tuple()
                and np.array_equal(self.keypoints, other.keypoints))

    def conforms_to(self, skeleton: SkeletonSpec) -> bool:
        return self.keypoint_count == skeleton.keypoint_count


def normalize_detection(box_xyxy: Sequence[float], keypoints: Iterable[Sequence[float]],
                        confidence: float, image_size: tuple[float, float],
                        frame_index: int = 0, source_id: int | None = None) -> HandDetection:
    """Convert a pixel-space detection into normalized image coordinates.

    ``box_xyxy`` holds the pixel corners ``(x1, y1, x2, y2)``; keypoints are
    pixel ``(x, y)`` pairs. Both are divided by ``(width, height)``.
    """
    width, height = image_size
    if not (width > 0 and height > 0):
        raise InvalidInputError(f"image size must be positive, got {image_size}")
    scale = np.array([width, height], dtype=np.float64)
    kp = np.asarray(list(keypoints), dtype=np.float64).reshape(-1, 2) / scale
    x1, y1, x2, y2 = (float(c) for c in box_xyxy)
    box = BoundingBox.from_corners(x1 / width, y1 / height, x2 / width, y2 / height)
    return HandDetection(box, _frozen_array(kp), float(confidence), int(frame_index), source_id)


@dataclass(frozen=True, eq=False)
class FrameObservation:
    frame_index: int
    timestamp_ms: int
    detections: tuple[HandDetection, ...]
    image_size: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        for det in self.detections:
            if det.frame_index != self.frame_index:
                raise SchemaError(f"detection frame {det.frame_index} differs from "
                                  f"frame {self.frame_index}")


def check_stream_order(frames: Sequence[FrameObservation]) -> None:
    prev = None
    for fr in frames:
        if prev is not None and fr.frame_index <= prev:
            raise StreamOrderError(f"frame {fr.frame_index} follows frame {prev}")
        prev = fr.frame_index


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

class TraceState(str, Enum):
    ACTIVE = "active"
    TERMINATED = "terminated"


@dataclass(eq=False)
class HandTrace:
    """A persistent hand identity with a bounded history of detections."""

    trace_id: int
    capacity: int = 64
    history: deque = field(default=None)
    misses: int = 0
    state: TraceState = TraceState.ACTIVE

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.capacity)
        elif not isinstance(self.history, deque) or self.history.maxlen != self.capacity:
            self.history = deque(self.history, maxlen=self.capacity)

    @classmethod
    def from_detections(cls, trace_id: int, detections: Iterable[HandDetection],
                        capacity: int = 64) -> "HandTrace":
        tr = cls(trace_id, capacity)
        for det in detections:
            tr.append(det)
        return tr

    def append(self, det: HandDetection) -> None:
        if self.state is TraceState.TERMINATED:
            raise StreamOrderError(f"trace {self.trace_id} is terminated")
        if self.history and det.frame_index <= self.history[-1][0]:
            raise StreamOrderError(f"trace {self.trace_id}: frame {det.frame_index} "
                                   f"does not follow {self.history[-1][0]}")
        self.history.append((det.frame_index, det))
        self.misses = 0

    @property
    def last(self) -> HandDetection:
        if not self.history:
            raise GestureTraceError(f"trace {self.trace_id} has an empty history")
        return self.history[-1][1]

    @property
    def detections(self) -> list[HandDetection]:
        return [d for _, d in self.history]

    def __len__(self) -> int:
        return len(self.history)

    def trailing_run(self) -> list[HandDetection]:
        """Most recent run of detections on consecutive frame indices."""
        run: list[HandDetection] = []
        prev = None
        for frame, det in reversed(self.history):
            if prev is not None and frame != prev - 1:
                break
            run.append(det)
            prev = frame
        run.reverse()
        return run

    def source_id(self) -> int | None:
        """Majority ground-truth source among the stored detections, if any."""
        ids = [d.source_id for d in self.detections if d.source_id is not None]
        if not ids:
            return None
        vals, counts = np.unique(ids, return_counts=True)
        return int(vals[np.argmax(counts)])
