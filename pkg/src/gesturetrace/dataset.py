"""Labeled, fixed-length clip datasets built from featurized traces.

Windows of several lengths are slid over each trace, labeled by their
overlap with the annotated gesture segments, and resampled to a common
objective length.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import (DEFAULT_LABELS, ConfigError, GestureLabel, GestureTraceError,
                   InvalidInputError, SchemaError, SkeletonSpec, WindowUnderflowError,
                   validate_labels)
from .features import MODES, MotionFeatureSequence


@dataclass(frozen=True)
class AnnotatedSegment:
    """Half-open annotated span ``[phi_s, phi_e)`` of a gesture.

    ``source_id`` restricts the segment to the trace of one hand; ``None``
    applies it to every trace of the recording.
    """

    phi_s: int
    phi_e: int
    class_id: int
    source_id: int | None = None

    def __post_init__(self):
        if not self.phi_s < self.phi_e:
            raise InvalidInputError(f"segment start {self.phi_s} must precede end {self.phi_e}")
        if self.class_id < 1:
            raise InvalidInputError("annotated segments carry a positive class")

    def to_dict(self) -> dict:
        d = {"start": self.phi_s, "end": self.phi_e, "class": self.class_id}
        if self.source_id is not None:
            d["src_id"] = self.source_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotatedSegment":
        try:
            src = d.get("src_id")
            return cls(int(d["start"]), int(d["end"]), int(d["class"]),
                       None if src is None else int(src))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed segment {d!r}") from exc


@dataclass(frozen=True)
class ClipSpan:
    psi_s: int
    psi_e: int

    def __post_init__(self):
        if not self.psi_s < self.psi_e:
            raise InvalidInputError(f"clip start {self.psi_s} must precede end {self.psi_e}")


@dataclass(frozen=True)
class LabelingThresholds:
    delta_ios: float = 0.3
    delta_ioa: float = 0.3

    def __post_init__(self):
        for v in (self.delta_ios, self.delta_ioa):
            if not 0 < v <= 1:
                raise ConfigError(f"labeling thresholds must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class AugmentationConfig:
    t_min: int = 8
    delta_t: int = 5
    t_obj: int = 13
    stride: int = 3

    def __post_init__(self):
        if self.t_min < 2 or self.delta_t < 1 or self.t_obj < 2 or self.stride < 1:
            raise ConfigError(f"invalid augmentation config {self}")

    @classmethod
    def single_length(cls, t_obj: int = 13, stride: int = 3) -> "AugmentationConfig":
        """Windows of exactly ``t_obj`` frames, i.e. augmentation switched off."""
        return cls(t_min=t_obj, delta_t=10 ** 9, t_obj=t_obj, stride=stride)


# ---------------------------------------------------------------------------
# labeling
# ---------------------------------------------------------------------------

def overlap_ratios(seg: AnnotatedSegment, clip: ClipSpan) -> tuple[float, float]:
    """Return ``(r_ioa, r_ios)``: overlap over annotation and over clip length."""
    inter = max(0, min(seg.phi_e, clip.psi_e) - max(seg.phi_s, clip.psi_s))
    return inter / (seg.phi_e - seg.phi_s), inter / (clip.psi_e - clip.psi_s)


def clip_label(ratios: tuple[float, float], seg_class: int,
               th: LabelingThresholds = LabelingThresholds()) -> int:
    r_ioa, r_ios = ratios
    if r_ios < th.delta_ios or r_ioa < th.delta_ioa:
        return 0
    return seg_class


def label_window(clip: ClipSpan, segments: Sequence[AnnotatedSegment],
                 th: LabelingThresholds = LabelingThresholds()) -> int:
    """Label a window against several segments via the best-overlapping one."""
    best = None
    for seg in sorted(segments, key=lambda s: (s.phi_s, s.phi_e)):
        ratios = overlap_ratios(seg, clip)
        if best is None or ratios[0] > best[0][0]:
            best = (ratios, seg)
    if best is None:
        return 0
    return clip_label(best[0], best[1].class_id, th)


# ---------------------------------------------------------------------------
# temporal augmentation
# ---------------------------------------------------------------------------

def timestep_set(cfg: AugmentationConfig, max_len: int) -> list[int]:
    if max_len < cfg.t_min:
        return []
    return list(range(cfg.t_min, max_len + 1, cfg.delta_t))


def resample_clip(seq: np.ndarray, t_obj: int) -> np.ndarray:
    """Piecewise-linear resampling of a ``(T, D)`` block to ``t_obj`` rows.

    Rows are sampled at ``t_obj`` evenly spaced positions over ``[0, T-1]``,
    so the first and last rows are kept exactly and ``T == t_obj`` is the
    identity.
    """
    seq = np.asarray(seq)
    T = len(seq)
    if T < 2 or t_obj < 2:
        raise WindowUnderflowError(f"resampling needs T >= 2 and t_obj >= 2, got {T}, {t_obj}",
                                   shortfall=max(0, 2 - T))
    pos = np.arange(t_obj) * (T - 1) / (t_obj - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), T - 2)
    frac = (pos - lo)[:, None]
    return (1.0 - frac) * seq[lo] + frac * seq[lo + 1]


class ClipResampler(TransformerMixin, BaseEstimator):
    """Resample variable-length ``(T_i, D)`` sequences to one fixed length.

    Parameters
    ----------
    t_obj : int, default=13
        Objective number of timesteps.
    """

    def __init__(self, t_obj=13):
        self.t_obj = t_obj

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = [X]
        out = [resample_clip(np.asarray(x, dtype=np.float64), self.t_obj) for x in X]
        if not out:
            raise InvalidInputError("no sequences to resample")
        return np.stack(out)


# ---------------------------------------------------------------------------
# clip generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TraceFeatures:
    trace_id: int
    runs: tuple[MotionFeatureSequence, ...]
    source_id: int | None = None


@dataclass(frozen=True, eq=False)
class Recording:
    recording_id: str
    traces: tuple[TraceFeatures, ...]
    segments: tuple[AnnotatedSegment, ...] = ()

    def segments_for(self, trace: TraceFeatures) -> list[AnnotatedSegment]:
        return [s for s in self.segments
                if s.source_id is None or s.source_id == trace.source_id]


@dataclass(frozen=True)
class ClipProvenance:
    recording_id: str
    trace_id: int
    psi_s: int
    psi_e: int
    length: int


@dataclass(frozen=True, eq=False)
class SequenceClip:
    features: np.ndarray  # (t_obj, D)
    label: int
    provenance: ClipProvenance


def generate_clips(recordings: Iterable[Recording], cfg: AugmentationConfig = AugmentationConfig(),
                   th: LabelingThresholds = LabelingThresholds()) -> list[SequenceClip]:
    """Slide every window length over every trace run, label and resample."""
    recordings = sorted(recordings, key=lambda r: r.recording_id)
    signature = None
    clips = []
    for rec in recordings:
        for tr in sorted(rec.traces, key=lambda t: t.trace_id):
            segs = rec.segments_for(tr)
            for run in tr.runs:
                sig = (run.mode, run.width, run.velocity_width)
                if signature is None:
                    signature = sig
                elif sig != signature:
                    raise SchemaError(f"recording {rec.recording_id!r} trace {tr.trace_id}: "
                                      f"features {sig} do not match {signature}")
                frames = run.frame_indices
                for length in timestep_set(cfg, len(run)):
                    for start in range(0, len(run) - length + 1, cfg.stride):
                        span = ClipSpan(int(frames[start]), int(frames[start + length - 1]) + 1)
                        label = label_window(span, segs, th)
                        feats = resample_clip(run.values[start:start + length], cfg.t_obj)
                        clips.append(SequenceClip(feats, label, ClipProvenance(
                            rec.recording_id, tr.trace_id, span.psi_s, span.psi_e, length)))
    clips.sort(key=lambda c: (c.provenance.recording_id, c.provenance.trace_id,
                              c.provenance.length, c.provenance.psi_s))
    return clips


def split_recordings(recording_ids: Iterable[str], ratio: float, seed: int
                     ) -> tuple[list[str], list[str]]:
    if not 0 < ratio < 1:
        raise InvalidInputError(f"split ratio must lie in (0, 1), got {ratio}")
    ids = sorted(set(recording_ids))
    if len(ids) < 2:
        raise InvalidInputError("cannot split fewer than 2 recordings")
    n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
    perm = np.random.default_rng(seed).permutation(len(ids))
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


def split_dataset(clips: Sequence[SequenceClip], ratio: float, seed: int
                  ) -> tuple[list[SequenceClip], list[SequenceClip]]:
    """Split clips by recording so that no recording lands on both sides."""
    train_ids, _ = split_recordings((c.provenance.recording_id for c in clips), ratio, seed)
    train_set = set(train_ids)
    train = [c for c in clips if c.provenance.recording_id in train_set]
    test = [c for c in clips if c.provenance.recording_id not in train_set]
    return train, test


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

DATASET_MAGIC = b"GTCLIPS1"
FORMAT_VERSION = 1


@dataclass(eq=False)
class ClipDataset:
    """Clips of one feature mode stacked as ``X`` (n, t_obj, D) and ``y`` (n,).

    Features are held as float32, exactly as they are stored on disk.
    """

    X: np.ndarray
    y: np.ndarray
    skeleton: SkeletonSpec
    mode: str
    t_obj: int
    velocity_width: int
    labels: tuple[GestureLabel, ...] = DEFAULT_LABELS
    provenance: list[ClipProvenance] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32).reshape(-1, self.t_obj,
                                                                        self.X.shape[-1])
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.mode not in MODES:
            raise SchemaError(f"unknown mode {self.mode!r}")
        if len(self.X) != len(self.y):
            raise SchemaError("X and y lengths differ")
        if self.provenance and len(self.provenance) != len(self.y):
            raise SchemaError("provenance length differs from clip count")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.labels)):
            raise SchemaError("clip label outside the label set")

    @classmethod
    def from_clips(cls, clips: Sequence[SequenceClip], skeleton: SkeletonSpec, mode: str,
                   t_obj: int, velocity_width: int,
                   labels: Sequence[GestureLabel] = DEFAULT_LABELS,
                   width: int | None = None) -> "ClipDataset":
        if clips:
            X = np.stack([c.features for c in clips])
        else:
            X = np.zeros((0, t_obj, width or 0))
        return cls(X, [c.label for c in clips], skeleton, mode, t_obj, velocity_width,
                   tuple(labels), [c.provenance for c in clips])

    def __len__(self) -> int:
        return len(self.y)

    @property
    def width(self) -> int:
        return self.X.shape[2]

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.y, minlength=len(self.labels))
        return {lab.name: int(counts[lab.class_id]) for lab in self.labels}

    def subset(self, mask) -> "ClipDataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        prov = [self.provenance[i] for i in idx] if self.provenance else []
        return ClipDataset(self.X[idx], self.y[idx], self.skeleton, self.mode, self.t_obj,
                           self.velocity_width, self.labels, prov)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "skeleton": self.skeleton.to_dict(),
            "mode": self.mode,
            "t_obj": self.t_obj,
            "width": self.width,
            "velocity_width": self.velocity_width,
            "labels": [{"id": lab.class_id, "name": lab.name} for lab in self.labels],
            "clips": [{"label": int(y), **({"recording": p.recording_id, "trace_id": p.trace_id,
                                            "psi_s": p.psi_s, "psi_e": p.psi_e,
                                            "length": p.length} if p else {})}
                      for y, p in zip(self.y, self.provenance or [None] * len(self.y))],
        }

    def save(self, path) -> None:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
            f.write(head)
            f.write(self.X.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ClipDataset":
        data = Path(path).read_bytes()
        if data[:8] != DATASET_MAGIC:
            raise SchemaError(f"{path}: not a clip dataset file")
        try:
            version, n_head = struct.unpack_from("<IQ", data, 8)
        except struct.error as exc:
            raise SchemaError(f"{path}: truncated dataset file") from exc
        if version != FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported dataset version {version}")
        off = 8 + struct.calcsize("<IQ")
        try:
            head = json.loads(data[off:off + n_head].decode("utf-8"))
            clips = head["clips"]
            n, t_obj, width = len(clips), int(head["t_obj"]), int(head["width"])
            X = np.frombuffer(data, dtype="<f4", offset=off + n_head).reshape(n, t_obj, width)
            labels = validate_labels([GestureLabel(int(d["id"]), d["name"])
                                      for d in head["labels"]])
            prov = [ClipProvenance(c["recording"], int(c["trace_id"]), int(c["psi_s"]),
                                   int(c["psi_e"]), int(c["length"]))
                    for c in clips if "recording" in c]
            return cls(X.astype(np.float32), [c["label"] for c in clips],
                       SkeletonSpec.from_dict(head["skeleton"]), head["mode"], t_obj,
                       int(head["velocity_width"]), labels, prov)
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, GestureTraceError):
                raise
            raise SchemaError(f"{path}: malformed dataset ({exc})") from exc
