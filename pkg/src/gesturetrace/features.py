"""Per-frame motion features of a tracked hand.

Motion mode stacks two blocks per frame: keypoint velocities (current minus
previous position, interleaved ``(du, dv)`` per keypoint) and skeleton edge
vectors (``x[pi] - x[pj]`` for each declared edge). Box mode is the ablation
variant that only sees ``(cx, cy, w, h)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import HandDetection, HandTrace, SchemaError, SkeletonSpec, WindowUnderflowError

MOTION = "motion"
BOX = "box"
MODES = (MOTION, BOX)
BOX_WIDTH = 4


@dataclass(frozen=True, eq=False)
class MotionFrame:
    x_v: np.ndarray
    x_e: np.ndarray
    frame_index: int

    @property
    def x_mot(self) -> np.ndarray:
        return np.concatenate([self.x_v, self.x_e])


@dataclass(frozen=True, eq=False)
class MotionFeatureSequence:
    """A ``(T, D)`` feature block plus the frame index of every row.

    In motion mode the first ``velocity_width`` columns are the velocity
    block and the rest the edge block; in box mode ``velocity_width`` is 0.
    """

    values: np.ndarray
    frame_indices: np.ndarray
    mode: str = MOTION
    velocity_width: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise SchemaError(f"unknown feature mode {self.mode!r}")
        if self.values.ndim != 2 or len(self.values) != len(self.frame_indices):
            raise SchemaError("values must be (T, D) with one frame index per row")
        if len(self.frame_indices) > 1 and np.any(np.diff(self.frame_indices) <= 0):
            raise SchemaError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def x_v(self) -> np.ndarray:
        return self.values[:, :self.velocity_width]

    @property
    def x_e(self) -> np.ndarray:
        return self.values[:, self.velocity_width:]

    def frames(self) -> list[MotionFrame]:
        return [MotionFrame(self.x_v[i], self.x_e[i], int(self.frame_indices[i]))
                for i in range(len(self))]

    def slice(self, start: int, stop: int) -> "MotionFeatureSequence":
        return MotionFeatureSequence(self.values[start:stop], self.frame_indices[start:stop],
                                     self.mode, self.velocity_width)


def feature_names(skeleton: SkeletonSpec, mode: str = MOTION) -> list[str]:
    if mode == BOX:
        return ["box_cx", "box_cy", "box_w", "box_h"]
    names = []
    for i in range(skeleton.keypoint_count):
        names += [f"kpt{i}_vu", f"kpt{i}_vv"]
    for i in range(skeleton.edge_count):
        names += [f"edge{i}_du", f"edge{i}_dv"]
    return names


def feature_width(skeleton: SkeletonSpec, mode: str = MOTION) -> int:
    if mode == BOX:
        return BOX_WIDTH
    return 2 * skeleton.keypoint_count + 2 * skeleton.edge_count


def velocity_features(window: Sequence[HandDetection], t: int) -> np.ndarray:
    if t <= 0:
        raise WindowUnderflowError("velocity needs a predecessor entry", shortfall=1)
    return (window[t].keypoints - window[t - 1].keypoints).reshape(-1)


def edge_features(det: HandDetection, skeleton: SkeletonSpec) -> np.ndarray:
    if not det.conforms_to(skeleton):
        raise SchemaError(f"detection has {det.keypoint_count} keypoints, skeleton "
                          f"{skeleton.name!r} expects {skeleton.keypoint_count}")
    if not skeleton.edges:
        return np.zeros(0)
    pi, pj = np.array(skeleton.edges).T
    return (det.keypoints[pi] - det.keypoints[pj]).reshape(-1)


def _check_consecutive(dets: Sequence[HandDetection]) -> None:
    frames = np.array([d.frame_index for d in dets])
    if len(frames) > 1 and np.any(np.diff(frames) != 1):
        raise WindowUnderflowError("window spans a gap in the trace history", shortfall=1)


def motion_from_detections(dets: Sequence[HandDetection],
                           skeleton: SkeletonSpec) -> MotionFeatureSequence:
    """Motion features for consecutive detections; yields ``len(dets) - 1`` rows."""
    if len(dets) < 2:
        raise WindowUnderflowError("need at least two detections for motion features",
                                   shortfall=2 - len(dets))
    _check_consecutive(dets)
    for d in dets:
        if not d.conforms_to(skeleton):
            raise SchemaError(f"detection does not match skeleton {skeleton.name!r}")
    kp = np.stack([d.keypoints for d in dets])  # (N, K, 2)
    vel = (kp[1:] - kp[:-1]).reshape(len(dets) - 1, -1)
    if skeleton.edges:
        pi, pj = np.array(skeleton.edges).T
        edges = (kp[1:, pi] - kp[1:, pj]).reshape(len(dets) - 1, -1)
    else:
        edges = np.zeros((len(dets) - 1, 0))
    values = np.concatenate([vel, edges], axis=1)
    frames = np.array([d.frame_index for d in dets[1:]], dtype=np.int64)
    return MotionFeatureSequence(values, frames, MOTION, 2 * skeleton.keypoint_count)


def box_from_detections(dets: Sequence[HandDetection]) -> MotionFeatureSequence:
    if not dets:
        raise WindowUnderflowError("empty window", shortfall=1)
    _check_consecutive(dets)
    values = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    frames = np.array([d.frame_index for d in dets], dtype=np.int64)
    return MotionFeatureSequence(values, frames, BOX, 0)


def motion_sequence(trace: HandTrace, T: int, skeleton: SkeletonSpec) -> MotionFeatureSequence:
    """The last ``T`` motion frames of a trace (consumes ``T + 1`` detections)."""
    run = trace.trailing_run()
    if len(run) < T + 1:
        raise WindowUnderflowError(
            f"trace {trace.trace_id}: need {T + 1} consecutive detections, have {len(run)}",
            shortfall=T + 1 - len(run))
    return motion_from_detections(run[-(T + 1):], skeleton)


def box_sequence(trace: HandTrace, T: int) -> MotionFeatureSequence:
    run = trace.trailing_run()
    if len(run) < T:
        raise WindowUnderflowError(
            f"trace {trace.trace_id}: need {T} consecutive detections, have {len(run)}",
            shortfall=T - len(run))
    return box_from_detections(run[-T:])


def window_sequence(trace: HandTrace, T: int, skeleton: SkeletonSpec,
                    mode: str = MOTION) -> MotionFeatureSequence:
    """Trailing window in either mode, aligned on the same ``T`` frames."""
    if mode == BOX:
        return box_sequence(trace, T)
    return motion_sequence(trace, T, skeleton)


def consecutive_runs(dets: Sequence[HandDetection]) -> list[list[HandDetection]]:
    runs: list[list[HandDetection]] = []
    for d in dets:
        if runs and d.frame_index == runs[-1][-1].frame_index + 1:
            runs[-1].append(d)
        else:
            runs.append([d])
    return runs


def featurize_detections(dets: Sequence[HandDetection], skeleton: SkeletonSpec,
                         mode: str = MOTION) -> list[MotionFeatureSequence]:
    """Featurize every consecutive run of a detection history.

    Box mode drops the first detection of each run as well, so that both
    modes cover exactly the same frames.
    """
    out = []
    for run in consecutive_runs(dets):
        if len(run) < 2:
            continue
        if mode == BOX:
            out.append(box_from_detections(run[1:]))
        else:
            out.append(motion_from_detections(run, skeleton))
    return out
