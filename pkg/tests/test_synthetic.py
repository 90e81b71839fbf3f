import numpy as np
import pytest

from gesturetrace.core import DEFAULT_SKELETON, InvalidInputError
from gesturetrace.features import featurize_detections
from gesturetrace.io import histories_from_trace_stream, read_jsonl, track_stream, \
    write_detection_stream, read_detection_stream, write_jsonl
from gesturetrace.synthetic import (CorpusConfig, GestureScript, NoiseConfig, hand_offsets,
                                    palm_position, resolve_script, synth_corpus,
                                    synth_gesture_trace, synth_scene)
from gesturetrace.tracking import TraceStore


def test_left_wave_closed_form_at_frame_five():
    script = GestureScript(1, 0, 40, amplitude=0.2, period=20, base=(0.5, 0.4))
    u, v = palm_position(script, 5)
    assert u == pytest.approx(0.5 - 0.2, abs=1e-15)
    assert v == 0.4
    dets = synth_gesture_trace(script)
    offs = hand_offsets(5, "left") * script.scale
    np.testing.assert_array_equal(dets[5].keypoints, np.asarray((u, v)) + offs)


def test_right_wave_goes_positive_first():
    script = GestureScript(2, 0, 40, amplitude=0.2, period=20, base=(0.5, 0.4))
    assert palm_position(script, 5)[0] == pytest.approx(0.7, abs=1e-15)


@pytest.mark.parametrize("cls,motion", [(0, "hold"), (0, "bob"), (0, "drift"), (1, None),
                                        (2, None)])
def test_zero_amplitude_is_stationary(cls, motion):
    dets = synth_gesture_trace(GestureScript(cls, 0, 20, amplitude=0.0, motion=motion))
    assert all(np.array_equal(d.keypoints, dets[0].keypoints) for d in dets)
    vel = featurize_detections(dets, DEFAULT_SKELETON)[0].x_v
    assert np.all(vel == 0)


def test_box_bounds_keypoints_with_margin():
    det = synth_gesture_trace(GestureScript(1, 0, 5))[2]
    lo, hi = det.keypoints.min(0), det.keypoints.max(0)
    np.testing.assert_allclose([det.box.w, det.box.h], (hi - lo) * 1.1, rtol=1e-12)
    x1, y1, x2, y2 = det.box.corners()
    assert x1 <= lo[0] and y1 <= lo[1] and x2 >= hi[0] and y2 >= hi[1]


def test_handedness_mirrors_offsets():
    np.testing.assert_array_equal(hand_offsets(5, "left")[:, 0], -hand_offsets(5, "right")[:, 0])
    assert resolve_script(GestureScript(1, 0, 5), np.random.default_rng(0)).handedness == "left"


def test_one_script_zero_noise_one_detection_per_frame():
    scene = synth_scene([GestureScript(1, 0, 30)], NoiseConfig())
    assert all(len(fr.detections) == 1 for fr in scene.frames)
    assert [s.phi_s for s in scene.segments] == [0] and scene.segments[0].class_id == 1
    assert scene.frames[3].timestamp_ms == 100


def test_full_dropout_gives_empty_frames():
    noise = NoiseConfig(dropout=1.0)
    scene = synth_scene([GestureScript(1, 0, 30)], noise)
    assert all(len(fr.detections) == 0 for fr in scene.frames)


def test_overlapping_same_source_rejected():
    with pytest.raises(InvalidInputError):
        synth_scene([GestureScript(1, 0, 30, source_id=3), GestureScript(2, 20, 40, source_id=3)])
    synth_scene([GestureScript(1, 0, 30, source_id=3), GestureScript(2, 30, 40, source_id=3)])


def test_annotations_inside_stream():
    for _, scene in synth_corpus(CorpusConfig(recordings=20, seed=5)):
        n = len(scene.frames)
        assert all(0 <= s.phi_s < s.phi_e <= n for s in scene.segments)


def test_scene_determinism():
    scripts = [GestureScript(1, 0, 50), GestureScript(0, 0, 50, base=(0.2, 0.2), source_id=1)]
    noise = NoiseConfig(keypoint_sigma=0.01, box_sigma=0.01, dropout=0.1, fp_rate=0.3,
                        fp_persistence=3, persistent_fps=1, seed=8)
    a, b = synth_scene(scripts, noise), synth_scene(scripts, noise)
    assert a.id_map == b.id_map
    for fa, fb in zip(a.frames, b.frames):
        assert len(fa.detections) == len(fb.detections)
        assert all(x.same_geometry(y) and x.confidence == y.confidence
                   for x, y in zip(fa.detections, fb.detections))
    c = synth_scene(scripts, NoiseConfig(keypoint_sigma=0.01, seed=9))
    assert any(not x.same_geometry(y) for fa, fc in zip(a.frames, c.frames)
               for x, y in zip(fa.detections, fc.detections))


def test_persistent_clutter_present_every_frame():
    scene = synth_scene([GestureScript(1, 0, 30)], NoiseConfig(persistent_fps=1, seed=1))
    assert all(ids.count(None) == 1 for ids in scene.id_map.values())


def test_zero_noise_round_trip_through_files(tmp_path):
    script = GestureScript(2, 0, 25, amplitude=0.1, period=12, base=(0.4, 0.6))
    scene = synth_scene([script], NoiseConfig())
    write_detection_stream(tmp_path / "s.det.jsonl", scene.frames)
    frames = read_detection_stream(tmp_path / "s.det.jsonl", DEFAULT_SKELETON)
    write_jsonl(tmp_path / "s.trace.jsonl", track_stream(frames, TraceStore()))
    hist = histories_from_trace_stream(read_jsonl(tmp_path / "s.trace.jsonl"))
    assert list(hist) == [0]
    seq = featurize_detections(hist[0], DEFAULT_SKELETON)[0]
    resolved = resolve_script(script, np.random.default_rng(0))
    offs = hand_offsets(5, resolved.handedness) * resolved.scale
    kp = np.stack([np.asarray(palm_position(resolved, f)) + offs for f in range(25)])
    assert np.array_equal(seq.x_v, (kp[1:] - kp[:-1]).reshape(24, -1))
