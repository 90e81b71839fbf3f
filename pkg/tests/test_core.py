import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturetrace.core import (DEFAULT_SKELETON, BoundingBox, FrameObservation, GestureLabel,
                               HandTrace, InvalidInputError, SchemaError, SkeletonSpec,
                               StreamOrderError, TraceState, check_stream_order,
                               normalize_detection, validate_labels, validate_skeleton)

from conftest import make_det


def test_normalize_midpoint_keypoint():
    det = normalize_detection((0, 0, 320, 240), [(160, 120)], 0.9, (320, 240))
    assert det.keypoints.tolist() == [[0.5, 0.5]]


def test_normalize_full_frame_box():
    det = normalize_detection((0, 0, 320, 240), [(0, 0)], 0.9, (320, 240))
    assert det.box.as_tuple() == (0.5, 0.5, 1.0, 1.0)


def test_normalize_division():
    det = normalize_detection((10, 10, 100, 200), [(80, 180)], 0.5, (320, 240))
    np.testing.assert_array_equal(det.keypoints, [[80 / 320, 180 / 240]])
    assert det.keypoints.tolist() == [[0.25, 0.75]]


@pytest.mark.parametrize("size", [(0, 240), (320, 0), (-1, 5)])
def test_normalize_rejects_bad_image_size(size):
    with pytest.raises(InvalidInputError):
        normalize_detection((0, 0, 1, 1), [(0, 0)], 0.5, size)


@settings(max_examples=200, deadline=None)
@given(x1=st.floats(0, 0.4), y1=st.floats(0, 0.4), dx=st.floats(0.05, 0.5),
       dy=st.floats(0.05, 0.5),
       kp=st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=6))
def test_normalize_idempotent_on_unit_image(x1, y1, dx, dy, kp):
    a = normalize_detection((x1, y1, x1 + dx, y1 + dy), kp, 0.5, (1, 1))
    x1b, y1b, x2b, y2b = a.box.corners()
    b = normalize_detection((x1b, y1b, x2b, y2b), a.keypoints, 0.5, (1, 1))
    np.testing.assert_allclose(b.keypoints, a.keypoints, atol=1e-12, rtol=0)
    np.testing.assert_allclose(b.box.as_tuple(), a.box.as_tuple(), atol=1e-12, rtol=0)


def test_default_skeleton_is_valid_star():
    assert validate_skeleton(SkeletonSpec(5, ((0, 1), (0, 2), (0, 3), (0, 4)))) is not None
    assert DEFAULT_SKELETON.edges == ((0, 1), (0, 2), (0, 3), (0, 4))


def test_skeleton_edge_out_of_range():
    with pytest.raises(SchemaError, match="edge index 3 out of range"):
        validate_skeleton(SkeletonSpec(3, ((0, 3),)))


def test_skeleton_empty_edges():
    with pytest.raises(SchemaError, match="empty edge set"):
        validate_skeleton(SkeletonSpec(2, ()))


def test_skeleton_duplicate_and_zero():
    with pytest.raises(SchemaError, match="duplicate"):
        validate_skeleton(SkeletonSpec(3, ((0, 1), (1, 0))))
    with pytest.raises(SchemaError, match="keypoint_count"):
        validate_skeleton(SkeletonSpec(0, ()))


def test_skeleton_dict_round_trip():
    assert SkeletonSpec.from_dict(DEFAULT_SKELETON.to_dict()) == DEFAULT_SKELETON


def test_labels_must_be_dense():
    validate_labels([GestureLabel(1, "a"), GestureLabel(0, "negative")])
    with pytest.raises(SchemaError):
        validate_labels([GestureLabel(0, "negative"), GestureLabel(2, "b")])


def test_box_validation_and_clamping():
    with pytest.raises(InvalidInputError):
        BoundingBox(0.5, 0.5, 0.0, 0.1)
    box = BoundingBox.clamped(1.6, 0.5, 0.4, 0.2)
    x1, _, x2, _ = box.corners()
    assert x2 <= 1.5 + 1e-12 and x1 >= 1.4 - 1e-12


def test_detection_keypoints_read_only():
    det = make_det()
    with pytest.raises(ValueError):
        det.keypoints[0, 0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10_000), unique=True, min_size=1, max_size=30))
def test_sorted_valid_stream_is_noop(indices):
    frames = [FrameObservation(i, i, ()) for i in sorted(indices)]
    check_stream_order(frames)
    assert sorted(frames, key=lambda f: f.frame_index) == frames


def test_stream_order_violation():
    with pytest.raises(StreamOrderError):
        check_stream_order([FrameObservation(3, 0, ()), FrameObservation(3, 0, ())])


def test_trace_history_rules():
    tr = HandTrace.from_detections(0, [make_det(frame=0), make_det(frame=1)], capacity=3)
    with pytest.raises(StreamOrderError):
        tr.append(make_det(frame=1))
    for f in (2, 5, 6):
        tr.append(make_det(frame=f))
    assert [f for f, _ in tr.history] == [2, 5, 6]
    assert [d.frame_index for d in tr.trailing_run()] == [5, 6]
    tr.state = TraceState.TERMINATED
    with pytest.raises(StreamOrderError):
        tr.append(make_det(frame=7))
