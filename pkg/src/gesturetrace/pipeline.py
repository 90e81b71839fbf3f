"""Glue between stages: tracked streams to recordings, recordings to datasets."""
from __future__ import annotations

from typing import Iterable, Sequence

from .core import FrameObservation, HandDetection, HandTrace, SkeletonSpec
from .dataset import (AnnotatedSegment, AugmentationConfig, ClipDataset, LabelingThresholds,
                      Recording, TraceFeatures, generate_clips, split_recordings)
from .features import MOTION, feature_width, featurize_detections
from .io import PipelineConfig
from .tracking import TraceEvents, TraceStore, track


def recording_from_histories(recording_id: str, histories: dict[int, Sequence[HandDetection]],
                             segments: Sequence[AnnotatedSegment], skeleton: SkeletonSpec,
                             mode: str = MOTION) -> Recording:
    traces = []
    for tid, dets in sorted(histories.items()):
        runs = featurize_detections(dets, skeleton, mode)
        if runs:
            src = HandTrace.from_detections(tid, dets, capacity=len(dets)).source_id()
            traces.append(TraceFeatures(tid, tuple(runs), src))
    return Recording(recording_id, tuple(traces), tuple(segments))


def track_full(frames: Sequence[FrameObservation], cfg: PipelineConfig = PipelineConfig()
               ) -> tuple[TraceStore, list[TraceEvents]]:
    """Track a finite stream keeping every trace's complete history."""
    return track(frames, cfg.make_store(capacity=max(len(frames), 1)))


def recording_from_frames(recording_id: str, frames: Sequence[FrameObservation],
                          segments: Sequence[AnnotatedSegment],
                          cfg: PipelineConfig = PipelineConfig(), mode: str = MOTION
                          ) -> Recording:
    store, _ = track_full(frames, cfg)
    histories = {t.trace_id: t.detections for t in store.all_traces()}
    return recording_from_histories(recording_id, histories, segments, cfg.skeleton, mode)


def build_dataset(recordings: Iterable[Recording], cfg: PipelineConfig, mode: str,
                  augment: bool = True) -> ClipDataset:
    aug = cfg.augmentation
    if not augment:
        aug = AugmentationConfig.single_length(aug.t_obj, aug.stride)
    clips = generate_clips(recordings, aug, cfg.labeling)
    vw = 2 * cfg.skeleton.keypoint_count if mode == MOTION else 0
    return ClipDataset.from_clips(clips, cfg.skeleton, mode, aug.t_obj, vw, cfg.labels,
                                  width=feature_width(cfg.skeleton, mode))


def build_split(recordings: Sequence[Recording], cfg: PipelineConfig, mode: str,
                ratio: float = 0.8, seed: int = 0, augment: bool = True
                ) -> tuple[ClipDataset, ClipDataset]:
    """Train/test datasets split by recording; the test side is never augmented."""
    train_ids, _ = split_recordings([r.recording_id for r in recordings], ratio, seed)
    train_set = set(train_ids)
    train = [r for r in recordings if r.recording_id in train_set]
    test = [r for r in recordings if r.recording_id not in train_set]
    return (build_dataset(train, cfg, mode, augment),
            build_dataset(test, cfg, mode, augment=False))


def identity_recovery(frames: Sequence[FrameObservation], events: Sequence[TraceEvents]) -> float:
    """Fraction of true-hand detections assigned to their source's first trace.

    A source's reference trace is the one that received its first detection.
    Clutter detections (no ``source_id``) are ignored.
    """
    reference: dict[int, int] = {}
    hits = total = 0
    for fr, ev in zip(frames, events):
        for i, det in enumerate(fr.detections):
            if det.source_id is None:
                continue
            tid = ev.assignments[i]
            ref = reference.setdefault(det.source_id, tid)
            total += 1
            hits += tid == ref
    return hits / total if total else 1.0

