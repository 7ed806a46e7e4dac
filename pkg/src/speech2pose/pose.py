"""106-D pose parameterization, loss weights, interpolation and the PSEQ file format.

Layout of a pose vector::

    [0, 72)    24 body joints, axis-angle triples (radians)
    [72, 96)   hand PCA coefficients, 12 per hand (left first)
    [96, 106)  expression coefficients
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_array, check_scalar
from .exceptions import MalformedHeader

POSE_DIM = 106
N_BODY_JOINTS = 24
JAW_JOINT = 22

BODY_WEIGHT = 1.0
HAND_WEIGHT = 4.0
FACE_WEIGHT = 100.0
MOUTH_WEIGHT = 100.0


@dataclass(frozen=True)
class PartLayout:
    body: range = range(0, 72)
    hands: range = range(72, 96)
    expression: range = range(96, 106)

    def __post_init__(self):
        parts = sorted([self.body, self.hands, self.expression], key=lambda r: r.start)
        if parts[0].start != 0 or parts[-1].stop != POSE_DIM:
            raise ValueError("part ranges must cover [0, 106)")
        for a, b in zip(parts, parts[1:]):
            if a.stop != b.start:
                raise ValueError("part ranges must be contiguous and disjoint")
        if len(self.body) % 3:
            raise ValueError("body range must hold whole axis-angle triples")

    @property
    def n_body_joints(self):
        return len(self.body) // 3

    def joint_slice(self, joint):
        start = self.body.start + 3 * joint
        return slice(start, start + 3)


DEFAULT_LAYOUT = PartLayout()


def default_weights(layout=DEFAULT_LAYOUT, mouth_joints=(JAW_JOINT,)):
    """Per-dimension loss weights: body 1, hands 4, expression 100.

    The jaw joint drives the mouth, so its three rotation dims carry the mouth
    weight instead of the body weight.
    """
    w = np.empty(POSE_DIM)
    w[layout.body.start:layout.body.stop] = BODY_WEIGHT
    w[layout.hands.start:layout.hands.stop] = HAND_WEIGHT
    w[layout.expression.start:layout.expression.stop] = FACE_WEIGHT
    for j in mouth_joints:
        w[layout.joint_slice(j)] = MOUTH_WEIGHT
    return w


def lerp_pose(a, b, w):
    """Elementwise ``(1 - w) * a + w * b``; endpoints are returned exactly."""
    check_scalar(w, "w", min_val=0.0, max_val=1.0)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w == 0:
        return a.copy()
    if w == 1:
        return b.copy()
    return (1.0 - w) * a + w * b


def sequence_diff_energy(frames):
    """Sum of squared differences between consecutive frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) < 2:
        return 0.0
    d = np.diff(frames, axis=0)
    return float(np.sum(d * d))


def canonicalize_axis_angle(aa):
    """Map axis-angle vectors (..., 3) to the same rotation with norm <= pi."""
    aa = np.array(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    # rotation by theta about n equals rotation by theta - 2*pi*k about n
    k = np.floor((theta + np.pi) / (2 * np.pi))
    scale = np.where(theta > np.pi, (theta - 2 * np.pi * k) / np.where(theta > 0, theta, 1.0), 1.0)
    return aa * scale


def canonicalize_pose(params, layout=DEFAULT_LAYOUT):
    """Wrap every body axis-angle triple of a pose (or pose array) into the canonical range."""
    params = np.array(params, dtype=np.float64)
    body = params[..., layout.body.start:layout.body.stop]
    shape = body.shape
    params[..., layout.body.start:layout.body.stop] = canonicalize_axis_angle(
        body.reshape(shape[:-1] + (-1, 3))).reshape(shape)
    return params


@dataclass
class PoseSequence:
    """Uniformly sampled pose frames, shape ``(T, 106)``."""

    frames: np.ndarray
    fps: float = 12.0
    layout: PartLayout = field(default=DEFAULT_LAYOUT, repr=False)

    def __post_init__(self):
        self.frames = check_array(self.frames, "frames")
        if self.frames.ndim == 1 and self.frames.size == 0:
            self.frames = self.frames.reshape(0, POSE_DIM)
        if self.frames.ndim != 2 or self.frames.shape[1] != POSE_DIM:
            raise ValueError(f"frames must have shape (T, {POSE_DIM}), got {self.frames.shape}")
        check_scalar(self.fps, "fps", min_val=0.0, include_min=False)

    def __len__(self):
        return len(self.frames)

    @property
    def duration(self):
        return len(self.frames) / self.fps

    def copy(self):
        return PoseSequence(self.frames.copy(), self.fps, self.layout)


def write_pseq(seq, path):
    """Write a pose sequence in the ``PSEQ 1`` text format with exact round-trip floats."""
    lines = [f"PSEQ 1 {float(seq.fps)!r} {len(seq)} {POSE_DIM}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in seq.frames)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pseq(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[:2] != ["PSEQ", "1"]:
            raise MalformedHeader(f"{path}: not a PSEQ 1 file")
        try:
            fps, count, dim = float(header[2]), int(header[3]), int(header[4])
        except ValueError as exc:
            raise MalformedHeader(f"{path}: bad header fields") from exc
        if dim != POSE_DIM:
            raise MalformedHeader(f"{path}: dimension {dim}, expected {POSE_DIM}")
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != count or any(len(r) != dim for r in rows):
        raise MalformedHeader(f"{path}: expected {count} rows of {dim} values")
    frames = np.array(rows, dtype=np.float64).reshape(count, dim)
    return PoseSequence(frames, fps)
