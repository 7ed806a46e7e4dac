"""Articulated skeleton surrogate: forward kinematics, projection and 2-D keypoint fitting.

The skeleton keeps the parameter accounting of the full body model (24 body
joints including the jaw, 15 joints per hand, hand PCA and expression
coefficients) with seeded orthonormal bases in place of learned ones.
Keypoints are ordered as the 54 joints followed by the 20 face landmarks.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array, check_scalar
from .exceptions import BehindCamera, LengthMismatch, MalformedHeader, NonFinite
from .pose import DEFAULT_LAYOUT, JAW_JOINT, N_BODY_JOINTS, POSE_DIM, PoseSequence, canonicalize_pose

N_HAND_JOINTS = 15
N_HAND_COEFFS = 12
N_JOINTS = N_BODY_JOINTS + 2 * N_HAND_JOINTS
N_LANDMARKS = 20
N_EXPRESSION = 10
N_KEYPOINTS = N_JOINTS + N_LANDMARKS
LEFT_WRIST = 20
RIGHT_WRIST = 21
MOUTH_LANDMARKS = (0, 1, 2, 3, 4, 5)
EXPRESSION_SCALE = 0.01

_BODY = [
    # name, parent, rest offset from parent (meters; x = subject's left, y up, z toward camera)
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.09, -0.08, 0.0)),
    ("right_hip", 0, (-0.09, -0.08, 0.0)),
    ("spine1", 0, (0.0, 0.11, -0.01)),
    ("left_knee", 1, (0.01, -0.38, 0.0)),
    ("right_knee", 2, (-0.01, -0.38, 0.0)),
    ("spine2", 3, (0.0, 0.13, 0.0)),
    ("left_ankle", 4, (0.0, -0.40, -0.02)),
    ("right_ankle", 5, (0.0, -0.40, -0.02)),
    ("spine3", 6, (0.0, 0.06, 0.01)),
    ("left_foot", 7, (0.02, -0.06, 0.12)),
    ("right_foot", 8, (-0.02, -0.06, 0.12)),
    ("neck", 9, (0.0, 0.21, -0.02)),
    ("left_collar", 9, (0.07, 0.12, 0.0)),
    ("right_collar", 9, (-0.07, 0.12, 0.0)),
    ("head", 12, (0.0, 0.09, 0.03)),
    ("left_shoulder", 13, (0.11, 0.03, 0.0)),
    ("right_shoulder", 14, (-0.11, 0.03, 0.0)),
    ("left_elbow", 16, (0.22, -0.12, 0.0)),
    ("right_elbow", 17, (-0.22, -0.12, 0.0)),
    ("left_wrist", 18, (0.22, -0.10, 0.02)),
    ("right_wrist", 19, (-0.22, -0.10, 0.02)),
    ("jaw", 15, (0.0, -0.02, 0.05)),
    ("head_top", 15, (0.0, 0.12, 0.0)),
]

_FINGERS = [
    # finger, base offset from wrist for the left hand, segment offset
    ("index", (0.09, -0.005, 0.025), (0.03, 0.0, 0.0)),
    ("middle", (0.095, -0.005, 0.005), (0.032, 0.0, 0.0)),
    ("ring", (0.09, -0.005, -0.015), (0.03, 0.0, 0.0)),
    ("pinky", (0.08, -0.005, -0.033), (0.022, 0.0, 0.0)),
    ("thumb", (0.03, -0.015, 0.04), (0.022, -0.005, 0.018)),
]

_LANDMARKS = [
    # offsets in the jaw frame; the first six are the mouth
    ("mouth_left", (0.025, -0.035, 0.03)),
    ("mouth_right", (-0.025, -0.035, 0.03)),
    ("lip_top", (0.0, -0.022, 0.04)),
    ("lip_bottom", (0.0, -0.048, 0.038)),
    ("lip_top_left", (0.012, -0.025, 0.038)),
    ("lip_bottom_right", (-0.012, -0.045, 0.036)),
    ("chin", (0.0, -0.075, 0.02)),
    ("jaw_left", (0.06, -0.05, -0.02)),
    ("jaw_right", (-0.06, -0.05, -0.02)),
    ("nose_tip", (0.0, 0.015, 0.06)),
    ("nose_bridge", (0.0, 0.05, 0.05)),
    ("eye_left", (0.032, 0.055, 0.035)),
    ("eye_right", (-0.032, 0.055, 0.035)),
    ("eye_left_outer", (0.05, 0.055, 0.025)),
    ("eye_right_outer", (-0.05, 0.055, 0.025)),
    ("brow_left", (0.035, 0.075, 0.04)),
    ("brow_right", (-0.035, 0.075, 0.04)),
    ("cheek_left", (0.055, 0.0, 0.02)),
    ("cheek_right", (-0.055, 0.0, 0.02)),
    ("forehead", (0.0, 0.1, 0.035)),
]


def _skew(v):
    """Batched cross-product matrices, (..., 3) -> (..., 3, 3)."""
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def rodrigues(aa):
    """Rotation matrices from axis-angle vectors, (n, 3) -> (n, 3, 3)."""
    aa = np.atleast_2d(aa)
    theta = np.linalg.norm(aa, axis=-1)[:, None, None]
    K = _skew(aa)
    K2 = K @ K
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(safe)) / safe ** 2)
    return np.eye(3) + a * K + b * K2


def rodrigues_jacobian(aa, R=None):
    """Derivatives of ``rodrigues`` w.r.t. each axis-angle component.

    Returns an array ``J`` of shape (n, 3, 3, 3) with ``J[n, i] = dR/dv_i``.
    """
    aa = np.atleast_2d(aa)
    if R is None:
        R = rodrigues(aa)
    n = len(aa)
    theta2 = np.sum(aa * aa, axis=-1)
    E = _skew(np.eye(3))  # generators [e_i]x, (3, 3, 3)
    J = np.empty((n, 3, 3, 3))
    small = theta2 < 1e-8
    if np.any(small):
        Ks = _skew(aa[small])[:, None]
        J[small] = E[None] + 0.5 * (E[None] @ Ks + Ks @ E[None])
    big = ~small
    if np.any(big):
        v = aa[big]
        K = _skew(v)
        IR = np.eye(3) - R[big]
        # columns (I - R) e_i, then v x ((I - R) e_i)
        cols = np.swapaxes(IR, -1, -2)  # (m, i, 3)
        cross = np.cross(v[:, None, :], cols)
        M = v[:, :, None, None] * K[:, None] + _skew(cross)
        J[big] = (M / theta2[big][:, None, None, None]) @ R[big][:, None]
    return J


@dataclass
class Camera:
    """Pinhole camera: ``x_cam = rotation @ x_world + translation``."""

    focal: float = 1000.0
    cx: float = 256.0
    cy: float = 256.0
    rotation: np.ndarray = field(default_factory=lambda: np.diag([1.0, -1.0, -1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.1, 4.0]))

    def __post_init__(self):
        check_scalar(self.focal, "focal", min_val=0.0, include_min=False)
        self.rotation = check_array(self.rotation, "rotation", shape=(3, 3))
        self.translation = check_array(self.translation, "translation", shape=(3,))


def read_camera(path):
    """Read a ``key = value`` camera file (focal, cx, cy, rotation: 9 values, translation: 3)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                key, _, val = line.partition("=")
                values[key.strip()] = [float(t) for t in val.split()]
    cam = Camera()
    try:
        if "focal" in values:
            cam.focal = values["focal"][0]
        if "cx" in values:
            cam.cx = values["cx"][0]
        if "cy" in values:
            cam.cy = values["cy"][0]
        if "rotation" in values:
            cam.rotation = np.array(values["rotation"]).reshape(3, 3)
        if "translation" in values:
            cam.translation = np.array(values["translation"]).reshape(3)
    except (IndexError, ValueError) as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    cam.__post_init__()
    return cam


def write_camera(camera, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"focal = {float(camera.focal)!r}\ncx = {float(camera.cx)!r}\ncy = {float(camera.cy)!r}\n")
        fh.write("rotation = " + " ".join(repr(float(v)) for v in camera.rotation.ravel()) + "\n")
        fh.write("translation = " + " ".join(repr(float(v)) for v in camera.translation) + "\n")


@dataclass
class Detection2D:
    points: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        self.points = check_array(self.points, "points", ndim=2)
        self.confidences = check_array(self.confidences, "confidences", ndim=1)
        if self.points.shape != (len(self.confidences), 2):
            raise LengthMismatch("points and confidences must have matching lengths")
        if np.any((self.confidences < 0) | (self.confidences > 1)):
            raise ValueError("confidences must lie in [0, 1]")

    def __len__(self):
        return len(self.confidences)


def read_detections(path):
    """Parse ``x y confidence`` lines; frames are separated by blank lines."""
    frames, current = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                if current:
                    frames.append(current)
                    current = []
                continue
            if len(parts) != 3:
                raise MalformedHeader(f"{path}:{lineno}: expected 'x y confidence'")
            current.append([float(p) for p in parts])
    if current:
        frames.append(current)
    out = []
    for rows in frames:
        rows = np.array(rows)
        out.append(Detection2D(rows[:, :2], rows[:, 2]))
    return out


def write_detections(detections, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, det in enumerate(detections):
            if i:
                fh.write("\n")
            for (x, y), c in zip(det.points, det.confidences):
                fh.write(f"{float(x)!r} {float(y)!r} {float(c)!r}\n")


@dataclass
class SkeletonModel:
    """Joint tree plus the hand and expression bases.

    ``offsets[j]`` is the rest offset of joint ``j`` from its parent, scaled per
    bone by ``bone_scale`` (the body shape). Landmarks live in the jaw frame.
    """

    names: list
    parents: np.ndarray
    offsets: np.ndarray
    hand_basis_left: np.ndarray
    hand_basis_right: np.ndarray
    landmarks: np.ndarray
    expression_basis: np.ndarray
    bone_scale: np.ndarray = None
    landmark_names: list = None

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.offsets = check_array(self.offsets, "offsets", shape=(N_JOINTS, 3))
        self.hand_basis_left = check_array(self.hand_basis_left, "hand_basis_left",
                                           shape=(N_HAND_COEFFS, 3 * N_HAND_JOINTS))
        self.hand_basis_right = check_array(self.hand_basis_right, "hand_basis_right",
                                            shape=(N_HAND_COEFFS, 3 * N_HAND_JOINTS))
        self.landmarks = check_array(self.landmarks, "landmarks", shape=(N_LANDMARKS, 3))
        self.expression_basis = check_array(self.expression_basis, "expression_basis",
                                            shape=(N_EXPRESSION, 3 * N_LANDMARKS))
        if self.bone_scale is None:
            self.bone_scale = np.ones(N_JOINTS)
        self.bone_scale = check_array(self.bone_scale, "bone_scale", shape=(N_JOINTS,))
        if np.any(self.bone_scale <= 0):
            raise ValueError("bone scales must be positive")
        if len(self.parents) != N_JOINTS or self.parents[0] != -1 or np.sum(self.parents < 0) != 1:
            raise ValueError("joint tree must have a single root at index 0")
        if np.any(self.parents[1:] >= np.arange(1, N_JOINTS)):
            raise ValueError("parents must precede their children")
        for basis in (self.hand_basis_left, self.hand_basis_right, self.expression_basis):
            if np.linalg.matrix_rank(basis) != basis.shape[0]:
                raise ValueError("bases must have full row rank")
        depth = np.zeros(N_JOINTS, dtype=int)
        for j in range(1, N_JOINTS):
            depth[j] = depth[self.parents[j]] + 1
        self._levels = [np.flatnonzero(depth == d) for d in range(1, depth.max() + 1)]
        # Per level: distinct parents and the 0/1 matrix summing children into them.
        self._level_parents = []
        for idx in self._levels:
            upar, inverse = np.unique(self.parents[idx], return_inverse=True)
            gather = np.zeros((len(upar), len(idx)))
            gather[inverse, np.arange(len(idx))] = 1.0
            self._level_parents.append((upar, gather))

    @property
    def scaled_offsets(self):
        return self.offsets * self.bone_scale[:, None]

    @property
    def keypoint_names(self):
        return list(self.names) + list(self.landmark_names or [f"landmark_{i}" for i in range(N_LANDMARKS)])

    @property
    def mouth_keypoints(self):
        return np.array(MOUTH_LANDMARKS) + N_JOINTS

    def bones(self):
        """(parent, child) joint index pairs."""
        return [(int(p), j) for j, p in enumerate(self.parents) if p >= 0]


def _orthonormal_rows(rng, rows, cols):
    q, _ = np.linalg.qr(rng.standard_normal((cols, rows)))
    return q.T.copy()


def default_skeleton(seed=0):
    """Build the surrogate skeleton with seeded hand and expression bases."""
    names = [b[0] for b in _BODY]
    parents = [b[1] for b in _BODY]
    offsets = [b[2] for b in _BODY]
    for side, wrist, sign in (("left", LEFT_WRIST, 1.0), ("right", RIGHT_WRIST, -1.0)):
        for finger, base, seg in _FINGERS:
            parent = wrist
            for k in range(3):
                off = base if k == 0 else seg
                names.append(f"{side}_{finger}{k + 1}")
                parents.append(parent)
                offsets.append((sign * off[0], off[1], off[2]))
                parent = len(names) - 1
    rng = np.random.default_rng(seed)
    return SkeletonModel(
        names=names,
        parents=np.array(parents),
        offsets=np.array(offsets),
        hand_basis_left=_orthonormal_rows(rng, N_HAND_COEFFS, 3 * N_HAND_JOINTS),
        hand_basis_right=_orthonormal_rows(rng, N_HAND_COEFFS, 3 * N_HAND_JOINTS),
        landmarks=np.array([lm[1] for lm in _LANDMARKS]),
        expression_basis=_orthonormal_rows(rng, N_EXPRESSION, 3 * N_LANDMARKS) * EXPRESSION_SCALE,
        landmark_names=[lm[0] for lm in _LANDMARKS],
    )


def write_skeleton(model, path, seed=0):
    """Write joints as ``name parent dx dy dz`` lines; landmarks follow with a ``face_`` prefix.

    The bases are not stored; ``seed`` is recorded so ``read_skeleton`` can rebuild them.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# basis_seed {seed}\n")
        offs = model.scaled_offsets
        for name, parent, off in zip(model.names, model.parents, offs):
            fh.write(f"{name} {parent} {float(off[0])!r} {float(off[1])!r} {float(off[2])!r}\n")
        for name, off in zip(model.keypoint_names[N_JOINTS:], model.landmarks):
            fh.write(f"face_{name} {JAW_JOINT} {float(off[0])!r} {float(off[1])!r} {float(off[2])!r}\n")


def read_skeleton(path):
    seed = 0
    joints, landmarks = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "basis_seed":
                    seed = int(parts[1])
                continue
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise MalformedHeader(f"{path}:{lineno}: expected 'name parent dx dy dz'")
            entry = (parts[0], int(parts[1]), [float(p) for p in parts[2:]])
            (landmarks if parts[0].startswith("face_") else joints).append(entry)
    if len(joints) != N_JOINTS or len(landmarks) != N_LANDMARKS:
        raise MalformedHeader(f"{path}: expected {N_JOINTS} joints and {N_LANDMARKS} face landmarks")
    base = default_skeleton(seed)
    return SkeletonModel(
        names=[j[0] for j in joints],
        parents=np.array([j[1] for j in joints]),
        offsets=np.array([j[2] for j in joints]),
        hand_basis_left=base.hand_basis_left,
        hand_basis_right=base.hand_basis_right,
        landmarks=np.array([lm[2] for lm in landmarks]),
        expression_basis=base.expression_basis,
        landmark_names=[lm[0][len("face_"):] for lm in landmarks],
    )


def _local_axis_angles(model, pose):
    aa = np.empty((N_JOINTS, 3))
    aa[:N_BODY_JOINTS] = pose[:72].reshape(N_BODY_JOINTS, 3)
    h = N_BODY_JOINTS
    aa[h:h + N_HAND_JOINTS] = (pose[72:84] @ model.hand_basis_left).reshape(N_HAND_JOINTS, 3)
    aa[h + N_HAND_JOINTS:] = (pose[84:96] @ model.hand_basis_right).reshape(N_HAND_JOINTS, 3)
    return aa


def _forward(model, pose, global_orient):
    pose = np.asarray(pose, dtype=np.float64)
    aa = _local_axis_angles(model, pose)
    R_loc = rodrigues(aa)
    R_glob = rodrigues(np.asarray(global_orient, dtype=np.float64))[0]
    offs = model.scaled_offsets
    R_cum = np.empty_like(R_loc)
    pos = np.empty((N_JOINTS, 3))
    R_cum[0] = R_glob @ R_loc[0]
    pos[0] = 0.0
    for idx in model._levels:
        par = model.parents[idx]
        pos[idx] = pos[par] + np.einsum("nij,nj->ni", R_cum[par], offs[idx])
        R_cum[idx] = R_cum[par] @ R_loc[idx]
    lm_local = model.landmarks + (pose[96:106] @ model.expression_basis).reshape(N_LANDMARKS, 3)
    lm = pos[JAW_JOINT] + lm_local @ R_cum[JAW_JOINT].T
    cache = dict(aa=aa, R_loc=R_loc, R_glob=R_glob, R_cum=R_cum, lm_local=lm_local,
                 global_orient=np.asarray(global_orient, dtype=np.float64))
    return np.vstack([pos, lm]), cache


def forward_kinematics(model, pose, global_orient=(0.0, 0.0, 0.0)):
    """World positions of the 54 joints followed by the 20 face landmarks, shape (74, 3)."""
    pose = check_array(pose, "pose", shape=(POSE_DIM,))
    points, _ = _forward(model, pose, global_orient)
    return points


def _backward(model, cache, grad_points):
    """Pull gradients on keypoint positions back to (pose, global_orient).

    ``grad_points`` is (74, 3) or a batch (B, 74, 3); outputs gain the same batch axis.
    """
    single = grad_points.ndim == 2
    G = grad_points[None] if single else grad_points
    B = len(G)
    R_loc, R_cum, R_glob = cache["R_loc"], cache["R_cum"], cache["R_glob"]
    offs = model.scaled_offsets
    G_p = G[:, :N_JOINTS].copy()
    G_R = np.zeros((B, N_JOINTS, 3, 3))
    g_lm = G[:, N_JOINTS:]
    G_p[:, JAW_JOINT] += g_lm.sum(1)
    G_R[:, JAW_JOINT] += np.einsum("bka,kc->bac", g_lm, cache["lm_local"])
    g_lm_local = g_lm @ R_cum[JAW_JOINT]
    g_expr = g_lm_local.reshape(B, -1) @ model.expression_basis.T

    G_Rloc = np.empty((B, N_JOINTS, 3, 3))
    for idx, (upar, gather) in zip(reversed(model._levels), reversed(model._level_parents)):
        par = model.parents[idx]
        G_Rloc[:, idx] = np.swapaxes(R_cum[par], -1, -2) @ G_R[:, idx]
        to_parent_R = (G_p[:, idx, :, None] * offs[idx][None, :, None, :]
                       + G_R[:, idx] @ np.swapaxes(R_loc[idx], -1, -2))
        G_p[:, upar] += np.einsum("uc,bcx->bux", gather, G_p[:, idx])
        G_R[:, upar] += np.einsum("uc,bcxy->buxy", gather, to_parent_R)
    G_Rloc[:, 0] = R_glob.T @ G_R[:, 0]
    G_Rglob = G_R[:, 0] @ R_loc[0].T

    J = rodrigues_jacobian(cache["aa"], R_loc)
    g_aa = np.einsum("bnac,niac->bni", G_Rloc, J)
    Jg = rodrigues_jacobian(cache["global_orient"], R_glob[None])[0]
    g_glob = np.einsum("bac,iac->bi", G_Rglob, Jg)

    g_pose = np.empty((B, POSE_DIM))
    g_pose[:, :72] = g_aa[:, :N_BODY_JOINTS].reshape(B, -1)
    h = N_BODY_JOINTS
    g_pose[:, 72:84] = g_aa[:, h:h + N_HAND_JOINTS].reshape(B, -1) @ model.hand_basis_left.T
    g_pose[:, 84:96] = g_aa[:, h + N_HAND_JOINTS:].reshape(B, -1) @ model.hand_basis_right.T
    g_pose[:, 96:106] = g_expr
    if single:
        return g_pose[0], g_glob[0]
    return g_pose, g_glob


def _to_camera(points, camera):
    return points @ camera.rotation.T + camera.translation


def project(points, camera):
    """Pinhole projection of world points (n, 3) to pixels (n, 2)."""
    q = _to_camera(np.atleast_2d(np.asarray(points, dtype=np.float64)), camera)
    if np.any(q[:, 2] <= 1e-6):
        raise BehindCamera(f"{int(np.sum(q[:, 2] <= 1e-6))} point(s) at non-positive depth")
    return np.column_stack([camera.cx + camera.focal * q[:, 0] / q[:, 2],
                            camera.cy + camera.focal * q[:, 1] / q[:, 2]])


def _check_detection(det):
    if len(det) != N_KEYPOINTS:
        raise LengthMismatch(f"detection has {len(det)} keypoints, expected {N_KEYPOINTS}")


def reprojection_energy(model, pose, global_orient, camera, det):
    """Confidence-weighted sum of squared pixel distances between projected keypoints and detections."""
    _check_detection(det)
    uv = project(forward_kinematics(model, pose, global_orient), camera)
    r = uv - det.points
    return float(np.sum(det.confidences * np.sum(r * r, axis=1)))


def energy_and_gradient(model, pose, global_orient, camera, det):
    """Reprojection energy with its analytic gradient w.r.t. pose (106) and global orientation (3)."""
    _check_detection(det)
    points, cache = _forward(model, pose, global_orient)
    q = _to_camera(points, camera)
    z = q[:, 2]
    if np.any(z <= 1e-6):
        raise BehindCamera(f"{int(np.sum(z <= 1e-6))} point(s) at non-positive depth")
    f = camera.focal
    uv = np.column_stack([camera.cx + f * q[:, 0] / z, camera.cy + f * q[:, 1] / z])
    r = uv - det.points
    c = det.confidences
    energy = float(np.sum(c * np.sum(r * r, axis=1)))
    g_uv = 2.0 * c[:, None] * r
    g_q = np.column_stack([
        f * g_uv[:, 0] / z,
        f * g_uv[:, 1] / z,
        -f * (g_uv[:, 0] * q[:, 0] + g_uv[:, 1] * q[:, 1]) / z ** 2,
    ])
    g_points = g_q @ camera.rotation
    g_pose, g_glob = _backward(model, cache, g_points)
    return energy, g_pose, g_glob


def residuals_and_jacobian(model, pose, global_orient, camera, det):
    """Confidence-scaled residuals ``sqrt(c) * (uv - x)`` (148,) and their Jacobian (148, 109).

    Jacobian columns are the 106 pose parameters followed by the 3 global orientation ones.
    """
    _check_detection(det)
    points, cache = _forward(model, pose, global_orient)
    q = _to_camera(points, camera)
    z = q[:, 2]
    if np.any(z <= 1e-6):
        raise BehindCamera(f"{int(np.sum(z <= 1e-6))} point(s) at non-positive depth")
    f = camera.focal
    uv = np.column_stack([camera.cx + f * q[:, 0] / z, camera.cy + f * q[:, 1] / z])
    s = np.sqrt(det.confidences)
    res = (s[:, None] * (uv - det.points)).ravel()
    # d(uv_k)/d(q_k), rows u and v
    P = np.zeros((N_KEYPOINTS, 2, 3))
    P[:, 0, 0] = f / z
    P[:, 0, 2] = -f * q[:, 0] / z ** 2
    P[:, 1, 1] = f / z
    P[:, 1, 2] = -f * q[:, 1] / z ** 2
    rows = (s[:, None, None] * P) @ camera.rotation  # (K, 2, 3) w.r.t. world points
    cot = np.zeros((N_KEYPOINTS, 2, N_KEYPOINTS, 3))
    k = np.arange(N_KEYPOINTS)
    cot[k, :, k, :] = rows
    g_pose, g_glob = _backward(model, cache, cot.reshape(2 * N_KEYPOINTS, N_KEYPOINTS, 3))
    return res, np.hstack([g_pose, g_glob])


@dataclass
class FitResult:
    pose: np.ndarray
    global_orient: np.ndarray
    energy: float
    initial_energy: float
    n_iter: int
    history: list = field(default_factory=list, repr=False)


def mean_reprojection_error(model, pose, global_orient, camera, det, keypoints=None):
    """Mean pixel distance over keypoints with positive confidence (or the given subset)."""
    uv = project(forward_kinematics(model, pose, global_orient), camera)
    d = np.linalg.norm(uv - det.points, axis=1)
    mask = det.confidences > 0 if keypoints is None else np.asarray(keypoints)
    return float(np.mean(d[mask]))


def _energy(model, x, camera, det):
    e = reprojection_energy(model, x[:POSE_DIM], x[POSE_DIM:], camera, det)
    if not np.isfinite(e):
        raise NonFinite(f"reprojection energy became {e}")
    return e


def _polish(model, camera, det, x, energy, free, history, max_iter=50, atol=1e-12):
    """Levenberg-Marquardt refinement; only strictly improving steps are kept."""
    damping = None
    for _ in range(max_iter):
        if energy <= atol:
            break
        r, J = residuals_and_jacobian(model, x[:POSE_DIM], x[POSE_DIM:], camera, det)
        J = J[:, free]
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ)
        scale = diag + 1e-9 * max(diag.max(), 1e-300)
        if damping is None:
            damping = 1e-3
        improved = False
        while damping < 1e12:
            step = np.linalg.solve(JtJ + damping * np.diag(scale), -g)
            candidate = x.copy()
            candidate[free] += step
            candidate[:POSE_DIM] = canonicalize_pose(candidate[:POSE_DIM])
            new_energy = _energy(model, candidate, camera, det)
            if new_energy < energy:
                improved = True
                damping = max(damping / 3.0, 1e-12)
                break
            damping *= 4.0
        if not improved:
            break
        rel = (energy - new_energy) / energy
        x, energy = candidate, new_energy
        history.append(energy)
        if rel < 1e-12:
            break
    return x, energy


def fit_pose(model, camera, det, init=None, init_global=(0.0, 0.0, 0.0), fix_global=True, *,
             max_iter=500, learning_rate=0.01, tol=1e-8, polish=True, atol=1e-12,
             beta1=0.9, beta2=0.999, eps=1e-8):
    """Minimize the reprojection energy over pose (and optionally global orientation).

    Adam steps are only accepted when they do not raise the energy; a rejected
    step halves the step size, an accepted one lets it recover toward
    ``learning_rate``. The Adam phase stops after ``max_iter`` proposals, when an
    accepted step improves the energy by less than ``tol`` relative, or when the
    energy falls to ``atol``. With ``polish`` a Levenberg-Marquardt phase then
    converges the weakly constrained directions Adam leaves wandering.
    """
    check_scalar(max_iter, "max_iter", min_val=0, target_type=int)
    check_scalar(learning_rate, "learning_rate", min_val=0.0, include_min=False)
    _check_detection(det)
    pose = np.zeros(POSE_DIM) if init is None else check_array(init, "init", shape=(POSE_DIM,)).copy()
    glob = check_array(init_global, "init_global", shape=(3,)).copy()

    x = np.concatenate([pose, glob])
    free = np.ones(POSE_DIM + 3, dtype=bool)
    if fix_global:
        free[POSE_DIM:] = False

    def evaluate(x):
        e, gp, gg = energy_and_gradient(model, x[:POSE_DIM], x[POSE_DIM:], camera, det)
        if not np.isfinite(e):
            raise NonFinite(f"reprojection energy became {e}")
        return e, np.where(free, np.concatenate([gp, gg]), 0.0)

    energy, grad = evaluate(x)
    initial = energy
    history = [energy]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr = learning_rate
    it = 0
    for it in range(1, max_iter + 1):
        if energy <= atol or lr < 1e-14:
            break
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** it)
        v_hat = v / (1 - beta2 ** it)
        candidate = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        candidate[:POSE_DIM] = canonicalize_pose(candidate[:POSE_DIM])
        if fix_global:
            candidate[POSE_DIM:] = x[POSE_DIM:]
        new_energy, new_grad = evaluate(candidate)
        if new_energy <= energy:
            improvement = (energy - new_energy) / energy
            x, energy, grad = candidate, new_energy, new_grad
            history.append(energy)
            lr = min(lr * 1.2, learning_rate)
            if improvement < tol:
                break
        else:
            lr *= 0.5
    if polish:
        x, energy = _polish(model, camera, det, x, energy, free, history, atol=atol)
    return FitResult(x[:POSE_DIM].copy(), x[POSE_DIM:].copy(), energy, initial, it, history)


def fit_sequence(model, camera, detections, init=None, init_global=(0.0, 0.0, 0.0), fps=12.0, **fit_kw):
    """Fit every frame; frame 0 also solves global orientation, later frames reuse it.

    Frames after the first are warm-started from the previous frame's pose.
    Returns ``(PoseSequence, global_orient, per-frame FitResult list)``.
    """
    if len(detections) == 0:
        raise ValueError("need at least one frame of detections")
    first = fit_pose(model, camera, detections[0], init, init_global, fix_global=False, **fit_kw)
    results = [first]
    for det in detections[1:]:
        results.append(fit_pose(model, camera, det, results[-1].pose, first.global_orient,
                                fix_global=True, **fit_kw))
    frames = np.array([r.pose for r in results])
    return PoseSequence(frames, fps), first.global_orient, results


def synthesize_detections(model, pose, global_orient, camera, confidences=None):
    """Exact detections of a pose: projected keypoints with the given (default unit) confidences."""
    uv = project(forward_kinematics(model, pose, global_orient), camera)
    c = np.ones(N_KEYPOINTS) if confidences is None else np.asarray(confidences, dtype=np.float64)
    return Detection2D(uv, c)


class PoseFitter(BaseEstimator, TransformerMixin):
    """Fit skeleton poses to per-frame 2-D detections.

    ``fit`` solves the first frame including global orientation and stores it
    in ``global_orient_``; ``transform`` fits every frame with that orientation
    frozen, warm-starting each frame from the previous one.
    """

    def __init__(self, skeleton=None, camera=None, max_iter=500, learning_rate=0.01, tol=1e-8, fps=12.0):
        self.skeleton = skeleton
        self.camera = camera
        self.max_iter = max_iter
        self.learning_rate = learning_rate
        self.tol = tol
        self.fps = fps

    def _parts(self):
        model = self.skeleton if self.skeleton is not None else default_skeleton()
        camera = self.camera if self.camera is not None else Camera()
        kw = dict(max_iter=self.max_iter, learning_rate=self.learning_rate, tol=self.tol)
        return model, camera, kw

    def fit(self, X, y=None):
        if len(X) == 0:
            raise ValueError("need at least one frame of detections")
        model, camera, kw = self._parts()
        res = fit_pose(model, camera, X[0], None, np.zeros(3), fix_global=False, **kw)
        self.global_orient_ = res.global_orient
        self.first_pose_ = res.pose
        self.first_energy_ = res.energy
        return self

    def transform(self, X):
        check_is_fitted(self, "global_orient_")
        model, camera, kw = self._parts()
        poses, prev = [], self.first_pose_
        self.energies_ = []
        for det in X:
            res = fit_pose(model, camera, det, prev, self.global_orient_, fix_global=True, **kw)
            poses.append(res.pose)
            self.energies_.append(res.energy)
            prev = res.pose
        return np.array(poses).reshape(len(poses), POSE_DIM)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).transform(X)
