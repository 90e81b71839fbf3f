"""Synthetic, ground-truth-annotated hand detection streams.

Gestures are parametric palm trajectories: waves are horizontal sinusoids,
negatives are holds, slow drifts or vertical bobs. Keypoints follow the palm
rigidly and the box bounds them with a margin. Noise adds jitter, dropped
detections and false positives. Every detection of a real hand carries its
``source_id`` so tracking and labeling can be checked against the truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (DEFAULT_SKELETON, BoundingBox, ConfigError, FrameObservation,
                   HandDetection, InvalidInputError, SkeletonSpec)
from .dataset import AnnotatedSegment

FPS = 30
NEGATIVE_MOTIONS = ("hold", "drift", "bob")
LEFT_WAVE, RIGHT_WAVE = 1, 2
BOX_MARGIN = 0.10


@dataclass(frozen=True)
class GestureScript:
    """One hand doing one motion over the half-open frame span ``[start, end)``.

    ``motion`` selects a negative motion (``hold``, ``drift`` or ``bob``);
    left unset, the generator draws one. For ``drift`` the amplitude is the
    total travel along ``heading`` (radians). ``handedness`` mirrors the
    hand shape; unset, waves use the matching hand (left wave, left hand)
    and negatives draw one.
    """

    class_id: int
    start: int
    end: int
    amplitude: float = 0.1
    period: float = 16.0
    base: tuple[float, float] = (0.5, 0.5)
    scale: float = 0.15
    source_id: int = 0
    motion: str | None = None
    heading: float | None = None
    handedness: str | None = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidInputError("amplitude must be non-negative")
        if self.period < 2:
            raise InvalidInputError("period must be at least 2 frames")
        if not 0 <= self.start < self.end:
            raise InvalidInputError(f"invalid script span [{self.start}, {self.end})")
        if self.class_id not in (0, LEFT_WAVE, RIGHT_WAVE):
            raise InvalidInputError(f"unsupported gesture class {self.class_id}")
        if self.motion is not None and self.motion not in NEGATIVE_MOTIONS:
            raise InvalidInputError(f"unknown negative motion {self.motion!r}")
        if self.handedness not in (None, "left", "right"):
            raise InvalidInputError(f"handedness must be 'left' or 'right'")


@dataclass(frozen=True)
class NoiseConfig:
    keypoint_sigma: float = 0.0
    box_sigma: float = 0.0
    dropout: float = 0.0
    fp_rate: float = 0.0
    fp_persistence: int = 1
    persistent_fps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.keypoint_sigma < 0 or self.box_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")
        if not 0 <= self.dropout <= 1:
            raise ConfigError("dropout must lie in [0, 1]")
        if not 0 <= self.fp_rate < 1:
            raise ConfigError("false-positive rate must lie in [0, 1)")
        if self.fp_persistence < 1 or self.persistent_fps < 0:
            raise ConfigError("invalid false-positive persistence settings")


@dataclass(eq=False)
class Scene:
    frames: list[FrameObservation]
    segments: list[AnnotatedSegment]
    # frame index -> ground-truth source id of each detection (None for clutter)
    id_map: dict[int, list[int | None]] = field(default_factory=dict)


def hand_offsets(keypoint_count: int, handedness: str = "right") -> np.ndarray:
    """Keypoint offsets from the palm center, in units of hand scale.

    Keypoint 0 is the wrist below the palm; the rest fan out above it, the
    first one (thumb) shorter and lower. Left hands are mirror images.
    """
    out = np.zeros((keypoint_count, 2))
    out[0] = (0.0, 0.45)
    n = keypoint_count - 1
    if n:
        angles = np.linspace(np.radians(-165), np.radians(-40), n)
        radius = np.full(n, 0.55)
        radius[0] = 0.42
        out[1:, 0] = radius * np.cos(angles)
        out[1:, 1] = radius * np.sin(angles)
    if handedness == "left":
        out[:, 0] = -out[:, 0]
    return out


def resolve_script(script: GestureScript, rng: np.random.Generator) -> GestureScript:
    """Fill in the random choices (motion, heading, handedness) of a script."""
    motion = script.motion
    heading = script.heading
    hand = script.handedness
    if script.class_id == 0:
        if motion is None:
            motion = NEGATIVE_MOTIONS[int(rng.integers(len(NEGATIVE_MOTIONS)))]
        if heading is None:
            heading = float(rng.uniform(0, 2 * np.pi))
        if hand is None:
            hand = ("left", "right")[int(rng.integers(2))]
    elif hand is None:
        hand = "left" if script.class_id == LEFT_WAVE else "right"
    return replace(script, motion=motion, heading=heading, handedness=hand)


def palm_position(script: GestureScript, frame: int) -> tuple[float, float]:
    """Closed-form palm center of a resolved script at an absolute frame."""
    f = frame - script.start
    bu, bv = script.base
    a = script.amplitude
    if script.class_id in (LEFT_WAVE, RIGHT_WAVE):
        sign = -1.0 if script.class_id == LEFT_WAVE else 1.0
        return bu + sign * a * np.sin(2 * np.pi * f / script.period), bv
    if script.motion == "drift":
        frac = f / max(1, script.end - script.start - 1)
        return bu + a * frac * np.cos(script.heading), bv + a * frac * np.sin(script.heading)
    if script.motion == "bob":
        return bu, bv + a * np.sin(2 * np.pi * f / script.period)
    return bu, bv


def _box_around(kp: np.ndarray) -> BoundingBox:
    lo, hi = kp.min(axis=0), kp.max(axis=0)
    c = (lo + hi) / 2
    ext = np.maximum((hi - lo) * (1 + BOX_MARGIN), 1e-3)
    return BoundingBox.clamped(c[0], c[1], ext[0], ext[1])


def synth_gesture_trace(script: GestureScript, skeleton: SkeletonSpec = DEFAULT_SKELETON,
                        rng: np.random.Generator | int | None = 0) -> list[HandDetection]:
    """Noise-free detections of one script, one per frame of its span."""
    rng = np.random.default_rng(rng)
    script = resolve_script(script, rng)
    offsets = hand_offsets(skeleton.keypoint_count, script.handedness) * script.scale
    dets = []
    for frame in range(script.start, script.end):
        kp = np.asarray(palm_position(script, frame)) + offsets
        dets.append(HandDetection(_box_around(kp), kp, 1.0, frame, script.source_id))
    return dets


def _jitter(det: HandDetection, noise: NoiseConfig, rng: np.random.Generator,
            confidence: float) -> HandDetection:
    kp = det.keypoints
    box = det.box
    if noise.keypoint_sigma:
        kp = kp + rng.normal(0.0, noise.keypoint_sigma, kp.shape)
    if noise.box_sigma:
        d = rng.normal(0.0, noise.box_sigma, 4)
        box = BoundingBox.clamped(box.cx + d[0], box.cy + d[1],
                                  max(box.w + d[2], 1e-3), max(box.h + d[3], 1e-3))
    return HandDetection(box, kp, confidence, det.frame_index, det.source_id)


def _clutter(skeleton: SkeletonSpec, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    center = rng.uniform(0.1, 0.9, 2)
    size = rng.uniform(0.08, 0.2)
    kp = center + rng.uniform(-size / 2, size / 2, (skeleton.keypoint_count, 2))
    return kp, size


def synth_scene(scripts: Sequence[GestureScript], noise: NoiseConfig = NoiseConfig(),
                n_frames: int | None = None, skeleton: SkeletonSpec = DEFAULT_SKELETON,
                image_size: tuple[int, int] = (320, 240)) -> Scene:
    """Render scripts into a frame stream with annotations and ground-truth ids."""
    if n_frames is None:
        n_frames = max((s.end for s in scripts), default=0)
    by_source: dict[int, list[GestureScript]] = {}
    for s in scripts:
        if s.end > n_frames:
            raise InvalidInputError(f"script [{s.start}, {s.end}) exceeds {n_frames} frames")
        for other in by_source.get(s.source_id, []):
            if s.start < other.end and other.start < s.end:
                raise InvalidInputError(f"overlapping scripts for source {s.source_id}")
        by_source.setdefault(s.source_id, []).append(s)

    per_frame: dict[int, list[HandDetection]] = {f: [] for f in range(n_frames)}
    for idx, s in enumerate(scripts):
        for det in synth_gesture_trace(s, skeleton, np.random.default_rng([noise.seed, idx])):
            per_frame[det.frame_index].append(det)

    rng = np.random.default_rng([noise.seed, len(scripts), 7919])
    clutter = [_clutter(skeleton, rng) for _ in range(noise.persistent_fps)]
    live_fps: list[tuple[int, np.ndarray]] = []  # (last frame, keypoints)
    frames, id_map = [], {}
    for f in range(n_frames):
        dets = []
        for det in per_frame[f]:
            if noise.dropout and rng.random() < noise.dropout:
                continue
            dets.append(_jitter(det, noise, rng, float(rng.uniform(0.75, 1.0))))
        for kp, _ in clutter:
            base = HandDetection(_box_around(kp), kp, 0.5, f, None)
            dets.append(_jitter(base, noise, rng, float(rng.uniform(0.3, 0.7))))
        if noise.fp_rate:
            for _ in range(int(rng.poisson(noise.fp_rate))):
                live_fps.append((f + noise.fp_persistence - 1, _clutter(skeleton, rng)[0]))
        live_fps = [(last, kp) for last, kp in live_fps if last >= f]
        for _, kp in live_fps:
            base = HandDetection(_box_around(kp), kp, 0.5, f, None)
            dets.append(_jitter(base, noise, rng, float(rng.uniform(0.3, 0.7))))
        order = rng.permutation(len(dets))
        dets = [dets[i] for i in order]
        frames.append(FrameObservation(f, int(round(f * 1000 / FPS)), tuple(dets), image_size))
        id_map[f] = [d.source_id for d in dets]

    segments = [AnnotatedSegment(s.start, s.end, s.class_id, s.source_id)
                for s in sorted(scripts, key=lambda s: (s.start, s.source_id)) if s.class_id > 0]
    return Scene(frames, segments, id_map)


# ---------------------------------------------------------------------------
# scenario builders
# ---------------------------------------------------------------------------

def crossing_scripts(n_frames: int = 120, separation: float = 0.12, scale: float = 0.15
                     ) -> list[GestureScript]:
    """Two hands sweeping past each other horizontally at different heights."""
    travel = 0.6
    return [
        GestureScript(0, 0, n_frames, amplitude=travel, base=(0.2, 0.5 - separation / 2),
                      scale=scale, source_id=0, motion="drift", heading=0.0,
                      handedness="right"),
        GestureScript(0, 0, n_frames, amplitude=travel, base=(0.8, 0.5 + separation / 2),
                      scale=scale, source_id=1, motion="drift", heading=np.pi,
                      handedness="left"),
    ]


@dataclass(frozen=True)
class CorpusConfig:
    """Random recordings for the three-class wave task.

    Each recording holds one primary hand performing a single gesture of a
    uniformly drawn class for its whole on-screen life, optionally with a
    second hand doing negative motion on the other side of the image.
    """

    recordings: int = 300
    seed: int = 0
    min_length: int = 18
    max_length: int = 26
    second_hand_prob: float = 0.35
    noise: NoiseConfig = NoiseConfig(keypoint_sigma=0.002, box_sigma=0.002, dropout=0.01,
                                     fp_rate=0.05)


def random_recording_scripts(rng: np.random.Generator, cfg: CorpusConfig
                             ) -> tuple[list[GestureScript], int]:
    cls = int(rng.integers(3))
    length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
    start = int(rng.integers(2, 6))
    n_frames = start + length + int(rng.integers(2, 6))
    left_side = bool(rng.integers(2))
    second = rng.random() < cfg.second_hand_prob
    if second:
        bu = rng.uniform(0.25, 0.4) if left_side else rng.uniform(0.6, 0.75)
    else:
        bu = rng.uniform(0.3, 0.7)
    base = (float(bu), float(rng.uniform(0.35, 0.65)))
    scale = float(rng.uniform(0.12, 0.18))
    if cls:
        amp = float(rng.uniform(0.06, 0.12))
        period = float(rng.uniform(0.7, 1.0) * length)
    else:
        amp = float(rng.uniform(0.03, 0.1))
        period = float(rng.uniform(12, 20))
    scripts = [GestureScript(cls, start, start + length, amp, period, base, scale, 0)]
    if second:
        bu2 = rng.uniform(0.6, 0.75) if left_side else rng.uniform(0.25, 0.4)
        scripts.append(GestureScript(0, 0, n_frames, float(rng.uniform(0.02, 0.08)),
                                     float(rng.uniform(12, 20)),
                                     (float(bu2), float(rng.uniform(0.35, 0.65))),
                                     float(rng.uniform(0.12, 0.18)), 1))
    return scripts, n_frames


def synth_corpus(cfg: CorpusConfig = CorpusConfig(), skeleton: SkeletonSpec = DEFAULT_SKELETON
                 ) -> list[tuple[str, Scene]]:
    out = []
    for i in range(cfg.recordings):
        rng = np.random.default_rng([cfg.seed, i])
        scripts, n_frames = random_recording_scripts(rng, cfg)
        noise = replace(cfg.noise, seed=int(rng.integers(2 ** 31)))
        out.append((f"rec{i:04d}", synth_scene(scripts, noise, n_frames, skeleton)))
    return out
