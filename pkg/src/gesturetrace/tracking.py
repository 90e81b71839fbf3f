"""Frame-to-frame hand association and trace lifecycle.

Each incoming detection is compared against the latest detection of every
active trace with a weighted match loss (keypoint distance, IoU and area
terms). Pairs above the gate are inadmissible; among the admissible ones an
exact minimum-cost matching is chosen.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (BoundingBox, FrameObservation, GestureTraceError, HandDetection,
                   HandTrace, InvalidInputError, SchemaError, StreamOrderError, TraceState,
                   ConfigError)

EXACT_LIMIT = 8


@dataclass(frozen=True)
class MatchWeights:
    w_loc: float = 0.5
    w_iou: float = 0.3
    w_area: float = 0.2
    gate: float = 0.6

    def __post_init__(self):
        if min(self.w_loc, self.w_iou, self.w_area) < 0:
            raise ConfigError("match weights must be non-negative")
        if self.w_loc + self.w_iou + self.w_area <= 0:
            raise ConfigError("at least one match weight must be positive")
        if not self.gate > 0:
            raise ConfigError(f"gate must be positive, got {self.gate}")


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_traces: tuple[int, ...]

    @property
    def total_loss(self) -> float:
        return sum((p[2] for p in self.pairs), 0.0)


@dataclass(frozen=True)
class TraceEvents:
    frame_index: int
    created: tuple[int, ...]
    updated: tuple[int, ...]
    terminated: tuple[int, ...]
    # detection index -> trace id, for every detection of the frame
    assignments: dict = field(default_factory=dict)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if a.area <= 0 or b.area <= 0:
        raise InvalidInputError("IoU of a degenerate box")
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    # areas from the same corner arithmetic, so identical boxes give exactly 1
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    inter = iw * ih
    return float(min(1.0, inter / (area_a + area_b - inter)))


def match_loss(det: HandDetection, trace: HandTrace, w: MatchWeights) -> float:
    """Weighted dissimilarity between ``det`` and the trace's latest detection."""
    if not trace.history:
        raise GestureTraceError(f"trace {trace.trace_id} has an empty history")
    ref = trace.last
    if det.keypoint_count != ref.keypoint_count:
        raise SchemaError("detection and trace use different skeletons")
    loss = 0.0
    if w.w_loc:
        dist = np.sqrt(((det.keypoints - ref.keypoints) ** 2).sum(axis=1)).mean()
        loss += w.w_loc * float(dist) / ref.box.diagonal
    if w.w_iou:
        loss += w.w_iou * (1.0 - iou(det.box, ref.box))
    if w.w_area:
        a_d, a_t = det.box.area, ref.box.area
        loss += w.w_area * abs(a_d - a_t) / max(a_d, a_t)
    return loss


def cost_matrix(dets: Sequence[HandDetection], traces: Sequence[HandTrace],
                w: MatchWeights) -> np.ndarray:
    costs = np.empty((len(dets), len(traces)))
    for i, det in enumerate(dets):
        for j, tr in enumerate(traces):
            costs[i, j] = match_loss(det, tr, w)
    return costs


def solve_assignment(costs: np.ndarray, gate: float) -> list[tuple[int, int]]:
    """Gated matching on a cost matrix, returned as (row, col) pairs sorted by row.

    Picks the largest admissible matching and, among those, the one with
    the smallest summed cost; remaining ties go to the lexicographically
    smallest pair list. Exact while the smaller side has at most
    ``EXACT_LIMIT`` entries, greedy beyond that.
    """
    n_rows, n_cols = costs.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if min(n_rows, n_cols) > EXACT_LIMIT:
        return _greedy(costs, gate)
    transposed = n_cols > EXACT_LIMIT
    c = costs.T if transposed else costs
    n_outer, n_inner = c.shape
    admissible = c <= gate
    # state: mask over inner indices -> (-count, cost, pairs)
    best: dict[int, tuple[int, float, tuple]] = {0: (0, 0.0, ())}
    for i in range(n_outer):
        nxt: dict[int, tuple[int, float, tuple]] = {}

        def offer(mask, key):
            cur = nxt.get(mask)
            if cur is None or key < cur:
                nxt[mask] = key

        for mask, (neg, total, pairs) in best.items():
            offer(mask, (neg, total, pairs))
            for j in range(n_inner):
                if mask >> j & 1 or not admissible[i, j]:
                    continue
                pair = (j, i) if transposed else (i, j)
                offer(mask | 1 << j, (neg - 1, total + float(c[i, j]),
                                      tuple(sorted(pairs + (pair,)))))
        best = nxt
    return list(min(best.values())[2])


def _greedy(costs: np.ndarray, gate: float) -> list[tuple[int, int]]:
    cand = sorted((float(costs[i, j]), i, j) for i in range(costs.shape[0])
                  for j in range(costs.shape[1]) if costs[i, j] <= gate)
    used_r, used_c, out = set(), set(), []
    for _, i, j in cand:
        if i not in used_r and j not in used_c:
            used_r.add(i)
            used_c.add(j)
            out.append((i, j))
    return sorted(out)


def associate(dets: Sequence[HandDetection], traces: Sequence[HandTrace],
              w: MatchWeights) -> Assignment:
    """Match one frame's detections to ``traces`` (any order; sorted by id here)."""
    traces = sorted(traces, key=lambda t: t.trace_id)
    costs = cost_matrix(dets, traces, w)
    matched = solve_assignment(costs, w.gate)
    pairs = tuple((i, traces[j].trace_id, float(costs[i, j])) for i, j in matched)
    used_d = {i for i, _ in matched}
    used_t = {j for _, j in matched}
    return Assignment(
        pairs,
        tuple(i for i in range(len(dets)) if i not in used_d),
        tuple(traces[j].trace_id for j in range(len(traces)) if j not in used_t),
    )


class TraceStore:
    """Active traces plus the lifecycle rules that create and retire them.

    Single writer: call :meth:`step` serially, once per frame, in order.
    """

    def __init__(self, weights: MatchWeights | None = None, max_misses: int = 5,
                 capacity: int = 64, keep_terminated: bool = True):
        if max_misses < 0 or capacity < 1:
            raise ConfigError("max_misses must be >= 0 and capacity >= 1")
        self.weights = weights or MatchWeights()
        self.max_misses = max_misses
        self.capacity = capacity
        self.keep_terminated = keep_terminated
        self.active: dict[int, HandTrace] = {}
        self.terminated: dict[int, HandTrace] = {}
        self.next_id = 0
        self.last_frame: int | None = None

    def all_traces(self) -> list[HandTrace]:
        return sorted([*self.active.values(), *self.terminated.values()],
                      key=lambda t: t.trace_id)

    def step(self, frame: FrameObservation) -> TraceEvents:
        if self.last_frame is not None and frame.frame_index <= self.last_frame:
            raise StreamOrderError(f"frame {frame.frame_index} stepped after "
                                   f"frame {self.last_frame}")
        self.last_frame = frame.frame_index
        dets = frame.detections
        result = associate(dets, list(self.active.values()), self.weights)
        assignments = {}
        updated = []
        for i, tid, _ in result.pairs:
            self.active[tid].append(dets[i])
            assignments[i] = tid
            updated.append(tid)
        terminated = []
        for tid in result.unmatched_traces:
            tr = self.active[tid]
            tr.misses += 1
            if tr.misses > self.max_misses:
                tr.state = TraceState.TERMINATED
                del self.active[tid]
                if self.keep_terminated:
                    self.terminated[tid] = tr
                terminated.append(tid)
        created = []
        for i in result.unmatched_detections:
            tr = HandTrace(self.next_id, self.capacity)
            tr.append(dets[i])
            self.active[tr.trace_id] = tr
            assignments[i] = tr.trace_id
            created.append(tr.trace_id)
            self.next_id += 1
        return TraceEvents(frame.frame_index, tuple(created), tuple(sorted(updated)),
                           tuple(terminated), assignments)


def track(frames: Sequence[FrameObservation], store: TraceStore | None = None
          ) -> tuple[TraceStore, list[TraceEvents]]:
    """Run a whole stream through a (fresh by default) store."""
    store = store or TraceStore()
    events = [store.step(fr) for fr in frames]
    return store, events
