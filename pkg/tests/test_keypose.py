import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speech2pose.exceptions import FpsMismatch, OutOfRange
from speech2pose.keypose import (DictEntry, KeyPose, PlannedInsertion, affected_window, apply_plan, insert_motion,
                                 insert_still, plan_insertions, read_dictionary, write_dictionary)
from speech2pose.pose import POSE_DIM, PoseSequence
from speech2pose.text import TimedTranscript, TimedWord


def base_seq(T=40, fps=10.0, seed=0):
    return PoseSequence(np.random.default_rng(seed).normal(0, 0.1, (T, POSE_DIM)), fps)


def test_still_insertion_layout():
    seq = base_seq()
    key = np.full(POSE_DIM, 0.5)
    out = insert_still(seq, key, 1.0, ramp=0.6, hold=0.3).frames
    f = seq.frames
    for k in (10, 11, 12):
        np.testing.assert_array_equal(out[k], key)
    for i in range(1, 6):
        np.testing.assert_allclose(out[4 + i], (1 - i / 6) * f[4] + (i / 6) * key, atol=1e-15)
        np.testing.assert_allclose(out[12 + i], (1 - i / 6) * key + (i / 6) * f[18], atol=1e-15)
    np.testing.assert_array_equal(out[:5], f[:5])
    np.testing.assert_array_equal(out[18:], f[18:])


def test_ramp_weights_quarter_steps():
    seq = PoseSequence(np.zeros((20, POSE_DIM)), 10.0)
    key = np.ones(POSE_DIM)
    out = insert_still(seq, key, 1.0, ramp=0.4, hold=0.1).frames[:, 0]
    np.testing.assert_allclose(out[6:15], [0, 0.25, 0.5, 0.75, 1, 0.75, 0.5, 0.25, 0])


def test_inserting_the_existing_pose_changes_nothing():
    frames = np.tile(np.linspace(-0.3, 0.3, POSE_DIM), (30, 1))
    seq = PoseSequence(frames, 10.0)
    out = insert_still(seq, frames[0], 1.5)
    np.testing.assert_allclose(out.frames, frames, atol=1e-15)


def test_motion_clip_is_copied():
    seq = base_seq()
    clip = PoseSequence(np.random.default_rng(3).normal(size=(5, POSE_DIM)), 10.0)
    out = insert_motion(seq, clip, 1.0).frames
    np.testing.assert_array_equal(out[10:15], clip.frames)


@settings(max_examples=40, deadline=None)
@given(t=st.floats(0.0, 3.9), ramp=st.floats(0.1, 1.0), hold=st.floats(0.0, 0.8), seed=st.integers(0, 1000))
def test_seam_steps_are_bounded(t, ramp, hold, seed):
    seq = base_seq(seed=seed)
    key = np.random.default_rng(seed + 1).normal(0, 1, POSE_DIM)
    out = insert_still(seq, key, t, ramp=ramp, hold=hold).frames
    n = int(round(ramp * seq.fps))
    k = int(round(t * seq.fps))
    h = max(1, int(round(hold * seq.fps)))
    f = seq.frames
    a_in = f[max(k - n, 0)]
    for j in range(max(k - n, 0), k):
        assert np.max(np.abs(out[j + 1] - out[j])) <= np.max(np.abs(key - a_in)) / n + 1e-12
    last = k + h - 1
    if last < len(f) - 1:
        a_out = f[min(last + n, len(f) - 1)]
        for j in range(last, min(last + n, len(f) - 1)):
            assert np.max(np.abs(out[j + 1] - out[j])) <= np.max(np.abs(a_out - key)) / n + 1e-12


def test_insertion_errors():
    seq = base_seq(T=20)
    with pytest.raises(OutOfRange):
        insert_still(seq, np.zeros(POSE_DIM), 5.0)
    with pytest.raises(OutOfRange):
        insert_still(seq, np.zeros(POSE_DIM), -0.5)
    with pytest.raises(OutOfRange):
        insert_motion(seq, PoseSequence(np.zeros((5, POSE_DIM)), 10.0), 1.8)
    with pytest.raises(FpsMismatch):
        insert_motion(seq, PoseSequence(np.zeros((5, POSE_DIM)), 12.0), 0.5)


def still_entry(word, value, p=1.0, hold=0.3):
    return DictEntry(word, KeyPose(pose=np.full(POSE_DIM, value), hold=hold), p)


def test_apply_plan_cases():
    seq = base_seq(T=200)
    assert apply_plan(seq, []).frames.tobytes() == seq.frames.tobytes()
    a, b = still_entry("a", 1.0), still_entry("b", 2.0)
    far = apply_plan(seq, [PlannedInsertion(2.0, a), PlannedInsertion(12.0, b)])
    np.testing.assert_array_equal(far.frames[20], np.full(POSE_DIM, 1.0))
    np.testing.assert_array_equal(far.frames[120], np.full(POSE_DIM, 2.0))
    near = apply_plan(seq, [PlannedInsertion(2.1, b), PlannedInsertion(2.0, a)])
    np.testing.assert_array_equal(near.frames[20], np.full(POSE_DIM, 1.0))
    assert not np.any(near.frames == 2.0)
    np.testing.assert_array_equal(near.frames, insert_still(seq, a.pose.pose, 2.0).frames)


def test_affected_window_covers_every_change():
    seq = base_seq()
    item = PlannedInsertion(1.0, still_entry("x", 3.0))
    lo, hi = affected_window(seq, item)
    changed = np.flatnonzero(np.any(apply_plan(seq, [item]).frames != seq.frames, axis=1))
    assert changed.min() >= lo and changed.max() <= hi


def transcript_of(words, gap=1.0):
    return TimedTranscript([TimedWord(w, i * gap, (i + 0.5) * gap) for i, w in enumerate(words)], len(words) * gap)


def test_gating_extremes():
    t = transcript_of(["huge", "other", "HUGE", "never"])
    plan = plan_insertions(t, [still_entry("huge", 1.0, p=1.0), still_entry("never", 2.0, p=0.0)], seed=4)
    assert [p.time for p in plan] == [0.0, 2.0]
    maybe = [still_entry("huge", 1.0, p=0.5), still_entry("other", 1.0, p=0.5)]
    assert [p.time for p in plan_insertions(t, maybe, seed=1)] == [p.time for p in plan_insertions(t, maybe, seed=1)]
    with pytest.raises(ValueError):
        plan_insertions(t, [still_entry("a", 0.0), still_entry("A", 1.0)])


def test_gating_rate():
    t = transcript_of(["great"] * 2000, gap=0.01)
    plan = plan_insertions(t, [still_entry("great", 0.0, p=0.3)], seed=9)
    assert abs(len(plan) / 2000 - 0.3) < 0.04


def test_dictionary_round_trip(tmp_path):
    clip = PoseSequence(np.random.default_rng(0).normal(size=(4, POSE_DIM)), 12.0)
    entries = [still_entry("hello", 0.25, p=0.5, hold=0.4),
               DictEntry("wave", KeyPose(clip=clip), 1.0)]
    write_dictionary(entries, tmp_path / "d.json")
    back = read_dictionary(tmp_path / "d.json")
    assert [e.word for e in back] == ["hello", "wave"]
    assert back[0].probability == 0.5 and back[0].pose.hold == 0.4
    np.testing.assert_array_equal(back[0].pose.pose, entries[0].pose.pose)
    assert back[1].pose.kind == "motion"
    np.testing.assert_array_equal(back[1].pose.clip.frames, clip.frames)


def test_key_pose_validation():
    with pytest.raises(ValueError):
        KeyPose()
    with pytest.raises(ValueError):
        DictEntry("w", KeyPose(pose=np.zeros(POSE_DIM)), 1.5)
