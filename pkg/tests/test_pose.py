import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from speech2pose.exceptions import MalformedHeader
from speech2pose.pose import (POSE_DIM, PartLayout, PoseSequence, canonicalize_axis_angle, canonicalize_pose,
                              default_weights, lerp_pose, read_pseq, sequence_diff_energy, write_pseq)
from speech2pose.skeleton import rodrigues

poses = arrays(np.float64, POSE_DIM, elements=st.floats(-5, 5))


def test_weights_by_part():
    w = default_weights()
    assert w[0] == 1.0 and w[80] == 4.0 and w[100] == 100.0
    assert np.all(w[66:69] == 100.0)
    assert np.all(w > 0)
    assert set(np.unique(w[:66])) == {1.0} and set(np.unique(w[72:96])) == {4.0}


def test_layout_must_cover():
    with pytest.raises(ValueError):
        PartLayout(body=range(0, 70), hands=range(72, 96), expression=range(96, 106))


def test_lerp_endpoints_and_linearity():
    a, b = np.zeros(POSE_DIM), np.full(POSE_DIM, 2.0)
    np.testing.assert_array_equal(lerp_pose(a, b, 0), a)
    np.testing.assert_array_equal(lerp_pose(a, b, 1), b)
    np.testing.assert_array_equal(lerp_pose(a, b, 0.25), np.full(POSE_DIM, 0.5))
    with pytest.raises(ValueError):
        lerp_pose(a, b, 1.5)


@given(poses, st.floats(0, 1))
def test_lerp_of_equal_endpoints(a, w):
    np.testing.assert_allclose(lerp_pose(a, a, w), a, rtol=1e-15, atol=1e-15)


def test_diff_energy_examples():
    e0 = np.eye(POSE_DIM)[0]
    assert sequence_diff_energy(np.zeros((4, POSE_DIM))) == 0.0
    assert sequence_diff_energy(np.zeros((1, POSE_DIM))) == 0.0
    assert sequence_diff_energy(np.stack([np.zeros(POSE_DIM), e0])) == 1.0
    assert sequence_diff_energy(np.stack([np.zeros(POSE_DIM), e0, 3 * e0])) == 5.0


@given(arrays(np.float64, (4, POSE_DIM), elements=st.floats(-3, 3)), poses)
def test_diff_energy_shift_invariant(frames, c):
    assert sequence_diff_energy(frames + c) == pytest.approx(sequence_diff_energy(frames), rel=1e-9, abs=1e-9)


@given(arrays(np.float64, 3, elements=st.floats(-20, 20)))
def test_canonical_axis_angle_same_rotation(aa):
    out = canonicalize_axis_angle(aa)
    assert np.linalg.norm(out) <= np.pi + 1e-6
    np.testing.assert_allclose(rodrigues(out), rodrigues(aa), atol=1e-9)


def test_canonicalize_leaves_hands_and_face():
    p = np.full(POSE_DIM, 7.0)
    out = canonicalize_pose(p)
    np.testing.assert_array_equal(out[72:], p[72:])
    assert np.all(np.linalg.norm(out[:72].reshape(24, 3), axis=1) <= np.pi + 1e-6)


def test_pseq_round_trip(tmp_path):
    seq = PoseSequence(np.random.default_rng(0).normal(size=(5, POSE_DIM)), 12.0)
    write_pseq(seq, tmp_path / "a.pseq")
    text = (tmp_path / "a.pseq").read_text()
    assert text.splitlines()[0] == "PSEQ 1 12.0 5 106"
    back = read_pseq(tmp_path / "a.pseq")
    np.testing.assert_array_equal(back.frames, seq.frames)
    assert back.fps == 12.0 and back.duration == pytest.approx(5 / 12)


def test_pseq_rejects_bad_files(tmp_path):
    (tmp_path / "b.pseq").write_text("PSEQ 2 12 1 106\n")
    with pytest.raises(MalformedHeader):
        read_pseq(tmp_path / "b.pseq")
    (tmp_path / "c.pseq").write_text("PSEQ 1 12 2 106\n" + " ".join(["0"] * 106) + "\n")
    with pytest.raises(MalformedHeader):
        read_pseq(tmp_path / "c.pseq")


def test_sequence_validation():
    with pytest.raises(ValueError):
        PoseSequence(np.zeros((3, 10)))
    with pytest.raises(ValueError):
        PoseSequence(np.zeros((3, POSE_DIM)), fps=0)
    assert len(PoseSequence(np.zeros((0, POSE_DIM)))) == 0
