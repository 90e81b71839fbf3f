"""JSON / JSON Lines readers and writers for streams, annotations and configs.

Detection stream, one frame per line::

    {"frame": 0, "ts_ms": 0, "image": [320, 240],
     "hands": [{"box": [cx, cy, w, h], "kpts": [[u, v], ...], "conf": 0.9, "src_id": 1}]}

Trace stream, one frame per line::

    {"frame": 0, "traces": [{"id": 0, "box": [...], "kpts": [...], "misses": 0, ...}],
     "events": {"created": [0], "terminated": []}}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

from .core import (DEFAULT_LABELS, DEFAULT_SKELETON, BoundingBox, FrameObservation,
                   GestureLabel, GestureTraceError, HandDetection, SchemaError, SkeletonSpec,
                   check_stream_order, validate_labels)
from .dataset import AnnotatedSegment, AugmentationConfig, LabelingThresholds
from .tracking import MatchWeights, TraceEvents, TraceStore


def dumps(record: Any) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(dumps(rec) + "\n")


def read_jsonl(path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


# ---------------------------------------------------------------------------
# detection stream
# ---------------------------------------------------------------------------

def detection_to_dict(det: HandDetection) -> dict:
    d = {"box": list(det.box.as_tuple()), "kpts": det.keypoints.tolist(),
         "conf": det.confidence}
    if det.source_id is not None:
        d["src_id"] = det.source_id
    return d


def detection_from_dict(d: dict, frame: int) -> HandDetection:
    try:
        src = d.get("src_id")
        return HandDetection(BoundingBox.clamped(*(float(v) for v in d["box"])),
                             [[float(u), float(v)] for u, v in d["kpts"]],
                             float(d.get("conf", 1.0)), frame,
                             None if src is None else int(src))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GestureTraceError):
            raise SchemaError(f"frame {frame}: {exc}") from exc
        raise SchemaError(f"frame {frame}: malformed hand record ({exc})") from exc


def frame_to_dict(frame: FrameObservation) -> dict:
    return {"frame": frame.frame_index, "ts_ms": frame.timestamp_ms,
            "image": list(frame.image_size),
            "hands": [detection_to_dict(d) for d in frame.detections]}


def frame_from_dict(d: dict) -> FrameObservation:
    try:
        idx = int(d["frame"])
        hands = d.get("hands", [])
        image = tuple(int(v) for v in d.get("image", (1, 1)))
        ts = int(d.get("ts_ms", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed frame record ({exc})") from exc
    return FrameObservation(idx, ts, tuple(detection_from_dict(h, idx) for h in hands), image)


def write_detection_stream(path, frames: Iterable[FrameObservation]) -> None:
    write_jsonl(path, (frame_to_dict(fr) for fr in frames))


def read_detection_stream(path, skeleton: SkeletonSpec | None = None) -> list[FrameObservation]:
    frames = [frame_from_dict(d) for d in read_jsonl(path)]
    check_stream_order(frames)
    if skeleton is not None:
        for fr in frames:
            for det in fr.detections:
                if not det.conforms_to(skeleton):
                    raise SchemaError(f"{path}: frame {fr.frame_index} has {det.keypoint_count} "
                                      f"keypoints, skeleton expects {skeleton.keypoint_count}")
    return frames


# ---------------------------------------------------------------------------
# trace stream
# ---------------------------------------------------------------------------

def trace_record(store: TraceStore, events: TraceEvents) -> dict:
    traces = []
    for tid in sorted(store.active):
        tr = store.active[tid]
        rec = {"id": tid, "misses": tr.misses, **detection_to_dict(tr.last)}
        traces.append(rec)
    return {"frame": events.frame_index, "traces": traces,
            "events": {"created": list(events.created), "terminated": list(events.terminated)}}


def track_stream(frames: Iterable[FrameObservation], store: TraceStore) -> Iterator[dict]:
    for fr in frames:
        events = store.step(fr)
        yield trace_record(store, events)


def histories_from_trace_stream(records: Iterable[dict]) -> dict[int, list[HandDetection]]:
    """Rebuild the full detection history of every trace from a trace stream."""
    out: dict[int, list[HandDetection]] = {}
    for rec in records:
        try:
            frame = int(rec["frame"])
            for t in rec["traces"]:
                if int(t["misses"]) == 0:
                    out.setdefault(int(t["id"]), []).append(detection_from_dict(t, frame))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed trace record ({exc})") from exc
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

def write_annotations(path, recording_id: str, n_frames: int,
                      segments: Iterable[AnnotatedSegment]) -> None:
    doc = {"recording": recording_id, "n_frames": n_frames,
           "segments": [s.to_dict() for s in segments]}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_annotations(path) -> tuple[str, list[AnnotatedSegment]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        segs = [AnnotatedSegment.from_dict(d) for d in doc.get("segments", [])]
        return str(doc.get("recording", Path(path).stem)), segs
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.004
    hidden: int = 64
    dropout: float = 0.2
    epochs: int = 60
    batch: int = 32
    mode: str = "two-branch"
    fc_hidden: int = 0
    layers: int = 1


@dataclass(frozen=True)
class TriggerSettings:
    threshold: float = 0.8
    consecutive: int = 3
    refractory: int = 30


@dataclass(frozen=True)
class PipelineConfig:
    skeleton: SkeletonSpec = DEFAULT_SKELETON
    labels: tuple[GestureLabel, ...] = DEFAULT_LABELS
    match: MatchWeights = MatchWeights()
    max_misses: int = 5
    capacity: int = 64
    labeling: LabelingThresholds = LabelingThresholds()
    augmentation: AugmentationConfig = AugmentationConfig()
    train: TrainSettings = TrainSettings()
    trigger: TriggerSettings = TriggerSettings()

    def make_store(self, capacity: int | None = None) -> TraceStore:
        return TraceStore(self.match, self.max_misses, capacity or self.capacity)


def _override(obj, overrides: dict, section: str):
    names = {f.name for f in fields(obj)}
    unknown = set(overrides) - names
    if unknown:
        raise SchemaError(f"config section {section!r}: unknown keys {sorted(unknown)}")
    return replace(obj, **overrides)


def load_config(path=None) -> PipelineConfig:
    """Defaults, overridden by any sections present in the JSON file at ``path``."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    known = {"skeleton", "labels", "match", "tracking", "labeling", "augmentation",
             "train", "trigger"}
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"{path}: unknown config sections {sorted(unknown)}")
    try:
        if "skeleton" in doc:
            cfg = replace(cfg, skeleton=SkeletonSpec.from_dict(doc["skeleton"]))
        if "labels" in doc:
            cfg = replace(cfg, labels=validate_labels(
                [GestureLabel(int(d["id"]), str(d["name"])) for d in doc["labels"]]))
        if "match" in doc:
            cfg = replace(cfg, match=_override(cfg.match, doc["match"], "match"))
        if "tracking" in doc:
            t = doc["tracking"]
            if set(t) - {"max_misses", "capacity"}:
                raise SchemaError("config section 'tracking': unknown keys")
            cfg = replace(cfg, max_misses=int(t.get("max_misses", cfg.max_misses)),
                          capacity=int(t.get("capacity", cfg.capacity)))
        for section in ("labeling", "augmentation", "train", "trigger"):
            if section in doc:
                cfg = replace(cfg, **{section: _override(getattr(cfg, section), doc[section],
                                                         section)})
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed config ({exc})") from exc
    return cfg
