import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handshift.annotations import (
    AnnotationError,
    HandPose,
    Keypoint,
    NUM_KEYPOINTS,
    SKELETON_EDGES,
    flip_pose,
    iter_skeleton_segments,
    parse_annotations,
    scale_pose,
    serialize_annotations,
)

from conftest import random_pose


def make_pose(width=32, height=32, c=1.0):
    pts = tuple(Keypoint(float(i % width), float(i % height), c)
                for i in range(NUM_KEYPOINTS))
    return HandPose(pts, width, height)


def test_skeleton_is_a_tree_over_21_joints():
    assert len(SKELETON_EDGES) == 20
    # every edge goes from a lower index (nearer the wrist) outward
    assert all(a < b for a, b in SKELETON_EDGES)
    # connected: each non-wrist joint appears exactly once as a far end
    far_ends = sorted(b for _, b in SKELETON_EDGES)
    assert far_ends == list(range(1, NUM_KEYPOINTS))


def test_pose_requires_21_keypoints():
    pts = tuple(Keypoint(0.0, 0.0, 1.0) for _ in range(20))
    with pytest.raises(AnnotationError):
        HandPose(pts, 32, 32)


def test_confidence_out_of_range_rejected():
    with pytest.raises(AnnotationError):
        Keypoint(1.0, 1.0, 1.5)
    with pytest.raises(AnnotationError):
        Keypoint(1.0, 1.0, -0.01)


def test_flip_mirrors_horizontal_only():
    pose = make_pose()
    flipped = flip_pose(pose)
    for kp, fk in zip(pose.keypoints, flipped.keypoints):
        assert fk.p == (pose.image_width - 1) - kp.p
        assert fk.q == kp.q
        assert fk.c == kp.c


def test_flip_is_an_involution():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pose = random_pose(rng)
        assert flip_pose(flip_pose(pose)) == pose


def test_scale_pose_scales_coordinates():
    pose = make_pose(width=32, height=32)
    scaled = scale_pose(pose, 64, 16)
    assert scaled.image_width == 64 and scaled.image_height == 16
    for kp, sk in zip(pose.keypoints, scaled.keypoints):
        assert sk.p == kp.p * 2.0
        assert sk.q == kp.q * 0.5
        assert sk.c == kp.c


def test_parse_rejects_wrong_field_count():
    text = "#width=32 height=32\nimg.png 1.0 2.0 0.5\n"
    with pytest.raises(AnnotationError, match="record 0"):
        parse_annotations(text)


def test_parse_rejects_missing_header():
    body = "img.png " + " ".join(["1.0 1.0 1.0"] * NUM_KEYPOINTS)
    with pytest.raises(AnnotationError, match="header"):
        parse_annotations(body)


def test_parse_error_names_record_and_joint():
    good = " ".join(["1.0 1.0 1.0"] * NUM_KEYPOINTS)
    bad = " ".join(["1.0 1.0 1.0"] * 5 + ["1.0 1.0 7.0"]
                   + ["1.0 1.0 1.0"] * 15)
    text = f"#width=32 height=32\na.png {good}\nb.png {bad}\n"
    with pytest.raises(AnnotationError, match=r"record 1: joint 5"):
        parse_annotations(text)


def test_parse_serialize_round_trip_exact():
    rng = np.random.default_rng(1)
    records = [(f"img{i}.png", random_pose(rng, size=48)) for i in range(5)]
    text = serialize_annotations(records)
    parsed = parse_annotations(text)
    assert parsed == records
    # and the text itself is a fixed point of another round trip
    assert serialize_annotations(parsed) == text


def test_serialize_emits_header_on_dimension_change():
    rng = np.random.default_rng(2)
    records = [("a.png", random_pose(rng, size=32)),
               ("b.png", random_pose(rng, size=64))]
    text = serialize_annotations(records)
    headers = [l for l in text.splitlines() if l.startswith("#")]
    assert headers == ["#width=32 height=32", "#width=64 height=64"]
    assert parse_annotations(text) == records


def test_iter_skeleton_segments_order_matches_edges():
    pose = make_pose()
    segments = list(iter_skeleton_segments(pose))
    assert len(segments) == 20
    for (a, b), (near, far) in zip(SKELETON_EDGES, segments):
        assert near == pose.keypoints[a]
        assert far == pose.keypoints[b]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.sampled_from([16, 32, 33, 64]))
def test_flip_round_trip_property(seed, size):
    pose = random_pose(np.random.default_rng(seed), size=size)
    assert flip_pose(flip_pose(pose)) == pose


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_serialize_round_trip_property(seed):
    pose = random_pose(np.random.default_rng(seed), size=32)
    text = serialize_annotations([("x.png", pose)])
    assert parse_annotations(text) == [("x.png", pose)]
