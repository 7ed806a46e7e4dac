"""Word-triggered key poses: dictionary, seeded insertion planning, and ramped overwrite."""
import json
import os
from dataclasses import dataclass

import numpy as np

from ._validation import check_array, check_scalar
from .exceptions import FpsMismatch, OutOfRange
from .pose import POSE_DIM, PoseSequence, lerp_pose, read_pseq, write_pseq

DEFAULT_RAMP = 0.6
DEFAULT_HOLD = 0.3


@dataclass(frozen=True, eq=False)
class KeyPose:
    """Either a still pose (``pose``, held for ``hold`` seconds) or a motion clip."""

    pose: np.ndarray = None
    clip: PoseSequence = None
    hold: float = DEFAULT_HOLD
    clip_path: str = None

    def __post_init__(self):
        if (self.pose is None) == (self.clip is None):
            raise ValueError("a key pose is either a still pose or a motion clip")
        if self.pose is not None:
            object.__setattr__(self, "pose", check_array(self.pose, "pose", shape=(POSE_DIM,)))
        elif len(self.clip) == 0:
            raise ValueError("motion clip is empty")
        check_scalar(self.hold, "hold", min_val=0.0)

    @property
    def kind(self):
        return "still" if self.pose is not None else "motion"


@dataclass(frozen=True)
class DictEntry:
    word: str
    pose: KeyPose
    probability: float

    def __post_init__(self):
        if not self.word:
            raise ValueError("dictionary word is empty")
        check_scalar(self.probability, "probability", min_val=0.0, max_val=1.0)


@dataclass(frozen=True)
class PlannedInsertion:
    time: float
    entry: DictEntry


def plan_insertions(transcript, entries, seed=0):
    """One seeded uniform draw per dictionary hit; keep the hit when the draw is below its probability.

    Matching is case-insensitive and exact. Insertions are anchored at the word
    start. Overlaps are resolved later by ``apply_plan``.
    """
    table = {}
    for e in entries:
        key = e.word.lower()
        if key in table:
            raise ValueError(f"duplicate dictionary word {e.word!r}")
        table[key] = e
    rng = np.random.default_rng(seed)
    plan = []
    for w in transcript.words:
        entry = table.get(w.word.lower())
        if entry is None:
            continue
        if rng.uniform() < entry.probability:
            plan.append(PlannedInsertion(w.start, entry))
    return plan


def _frame_index(seq, t):
    check_scalar(t, "t")
    k = int(round(t * seq.fps))
    if t < 0 or k >= len(seq):
        raise OutOfRange(f"time {t} s lies outside a {len(seq)}-frame sequence at {seq.fps} fps")
    return k


def _overwrite(frames, k, span, n_ramp):
    """Write ``span`` at frame ``k`` with linear entry/exit ramps of ``n_ramp`` frames.

    Ramp anchors falling outside the sequence are replaced by the boundary frame
    and the ramp frames beyond the boundary are dropped, so every written step
    stays at most ``1/n_ramp`` of the endpoint gap.
    """
    T = len(frames)
    out = frames.copy()
    L = len(span)
    stop = min(k + L, T)
    out[k:stop] = span[:stop - k]
    if n_ramp <= 0:
        return out
    start_anchor = frames[max(k - n_ramp, 0)]
    for i in range(1, n_ramp):
        j = k - n_ramp + i
        if j >= 0:
            out[j] = lerp_pose(start_anchor, span[0], i / n_ramp)
    last = k + L - 1
    if last < T - 1:
        end_anchor = frames[min(last + n_ramp, T - 1)]
        for i in range(1, n_ramp):
            j = last + i
            if j < T:
                out[j] = lerp_pose(span[-1], end_anchor, i / n_ramp)
    return out


def _ramp_frames(seq, ramp):
    check_scalar(ramp, "ramp", min_val=0.0, include_min=False)
    return int(round(ramp * seq.fps))


def insert_still(seq, pose, t, ramp=DEFAULT_RAMP, hold=DEFAULT_HOLD):
    """Overwrite ``round(hold*fps)`` frames from time ``t`` with ``pose`` and ramp in and out linearly."""
    pose = check_array(pose, "pose", shape=(POSE_DIM,))
    check_scalar(hold, "hold", min_val=0.0)
    k = _frame_index(seq, t)
    n = _ramp_frames(seq, ramp)
    h = max(1, int(round(hold * seq.fps)))
    span = np.repeat(pose[None], h, axis=0)
    return PoseSequence(_overwrite(seq.frames, k, span, n), seq.fps)


def insert_motion(seq, clip, t, ramp=DEFAULT_RAMP):
    """Overwrite the frames from time ``t`` with ``clip``, ramping into its first and out of its last frame."""
    if clip.fps != seq.fps:
        raise FpsMismatch(f"clip at {clip.fps} fps, sequence at {seq.fps} fps")
    if len(clip) == 0:
        raise ValueError("motion clip is empty")
    k = _frame_index(seq, t)
    if k + len(clip) > len(seq):
        raise OutOfRange(f"{len(clip)}-frame clip at frame {k} overruns a {len(seq)}-frame sequence")
    n = _ramp_frames(seq, ramp)
    return PoseSequence(_overwrite(seq.frames, k, clip.frames, n), seq.fps)


def affected_window(seq, item, ramp=DEFAULT_RAMP):
    """Inclusive frame range ``(first, last)`` an insertion may modify."""
    k = int(round(item.time * seq.fps))
    n = int(round(ramp * seq.fps))
    kp = item.entry.pose
    span = len(kp.clip) if kp.kind == "motion" else max(1, int(round(kp.hold * seq.fps)))
    return k - n + 1, k + span + n - 2


def apply_plan(seq, plan, ramp=DEFAULT_RAMP):
    """Apply insertions in time order, skipping any whose window overlaps one already applied."""
    out = seq
    taken = []
    for item in sorted(plan, key=lambda p: p.time):
        lo, hi = affected_window(seq, item, ramp)
        if any(lo <= b and a <= hi for a, b in taken):
            continue
        kp = item.entry.pose
        if kp.kind == "still":
            out = insert_still(out, kp.pose, item.time, ramp, kp.hold)
        else:
            out = insert_motion(out, kp.clip, item.time, ramp)
        taken.append((lo, hi))
    return out


def read_dictionary(path):
    """Load dictionary entries from JSON; motion clip paths resolve relative to the file."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: expected a JSON array")
    entries = []
    for i, item in enumerate(raw):
        try:
            kind = item["kind"]
            if kind == "still":
                kp = KeyPose(pose=np.asarray(item["pose"], dtype=np.float64),
                             hold=float(item.get("hold_s", DEFAULT_HOLD)))
            elif kind == "motion":
                clip_path = item["clip_path"]
                kp = KeyPose(clip=read_pseq(os.path.join(base, clip_path)), clip_path=clip_path)
            else:
                raise ValueError(f"unknown kind {kind!r}")
            entries.append(DictEntry(item["word"], kp, float(item["probability"])))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: entry {i} is malformed ({exc})") from exc
    return entries


def write_dictionary(entries, path):
    """Write entries as JSON; motion clips without a stored path are saved beside the file."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for e in entries:
        item = {"word": e.word, "probability": e.probability, "kind": e.pose.kind}
        if e.pose.kind == "still":
            item["pose"] = [float(v) for v in e.pose.pose]
            item["hold_s"] = e.pose.hold
        else:
            clip_path = e.pose.clip_path or f"clip_{e.word}.pseq"
            write_pseq(e.pose.clip, os.path.join(base, clip_path))
            item["clip_path"] = clip_path
        out.append(item)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1)
