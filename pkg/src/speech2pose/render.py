"""Colorized skeleton rendering with reserved face/hand marker colors, part crops, and binary PPM I/O."""
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from skimage.draw import disk, line, polygon

from .exceptions import MalformedHeader, MarkerMissing
from .skeleton import LEFT_WRIST, N_JOINTS, RIGHT_WRIST, forward_kinematics, project

FRAME_PATTERN = "frame_%06d.ppm"


@dataclass
class Image:
    """RGB image stored as an ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"pixels must be (H, W, 3) uint8, got {px.shape} {px.dtype}")
        self.pixels = px

    @classmethod
    def blank(cls, width, height):
        return cls(np.zeros((height, width, 3), dtype=np.uint8))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def tobytes(self):
        return self.pixels.tobytes()


@dataclass(frozen=True)
class PartMarkers:
    hand_color_left: tuple = (255, 0, 255)
    hand_color_right: tuple = (0, 255, 255)
    face_color: tuple = (255, 255, 255)
    hand_radius: float = 12.0

    def __post_init__(self):
        colors = {tuple(self.hand_color_left), tuple(self.hand_color_right), tuple(self.face_color)}
        if len(colors) != 3:
            raise ValueError("marker colors must be pairwise distinct")
        if self.hand_radius <= 0:
            raise ValueError("hand_radius must be positive")

    @property
    def reserved(self):
        return (tuple(self.face_color), tuple(self.hand_color_left), tuple(self.hand_color_right))


# Limb groups; none of these may coincide with a marker color.
LIMB_PALETTE = {
    "spine": (255, 170, 0),
    "left_leg": (0, 170, 255),
    "right_leg": (255, 85, 85),
    "left_arm": (170, 255, 0),
    "right_arm": (0, 255, 85),
    "head": (170, 85, 255),
    "left_hand": (255, 255, 0),
    "right_hand": (0, 85, 255),
}


def _limb(name):
    for side in ("left", "right"):
        if name.startswith(side):
            part = name[len(side) + 1:]
            if part.rstrip("123") in ("index", "middle", "ring", "pinky", "thumb"):
                return f"{side}_hand"
            if part in ("hip", "knee", "ankle", "foot"):
                return f"{side}_leg"
            return f"{side}_arm"
    if name in ("neck", "head", "jaw", "head_top"):
        return "head"
    return "spine"


def _bone_color(model, child, markers):
    color = LIMB_PALETTE[_limb(model.names[child])]
    if color in markers.reserved:
        raise ValueError(f"palette color {color} collides with a marker color")
    return color


def _draw_segment(px, p0, p1, color):
    h, w = px.shape[:2]
    guard = 2 * max(h, w)
    (x0, y0), (x1, y1) = np.clip(np.rint(p0), -guard, guard), np.clip(np.rint(p1), -guard, guard)
    rr, cc = line(int(y0), int(x0), int(y1), int(x1))
    keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    px[rr[keep], cc[keep]] = color


def face_polygon(uv_landmarks):
    """Convex hull vertices (counter-clockwise) of the projected face landmarks."""
    try:
        hull = ConvexHull(uv_landmarks)
    except QhullError:
        return uv_landmarks
    return uv_landmarks[hull.vertices]


def projected_layout(model, pose, global_orient, camera):
    """Pixel positions the renderer uses: all keypoints, both wrists, and the face hull."""
    uv = project(forward_kinematics(model, pose, global_orient), camera)
    return dict(keypoints=uv, left_wrist=uv[LEFT_WRIST], right_wrist=uv[RIGHT_WRIST],
                face=face_polygon(uv[N_JOINTS:]))


def render_skeleton(model, pose, global_orient, camera, size=(512, 512), markers=PartMarkers()):
    """Draw bones, then the filled white face hull, then both hand discs, on black.

    ``size`` is ``(width, height)``. Raises ``BehindCamera`` for points behind the camera.
    """
    width, height = size
    img = Image.blank(width, height)
    px = img.pixels
    layout = projected_layout(model, pose, global_orient, camera)
    uv = layout["keypoints"]
    for parent, child in model.bones():
        _draw_segment(px, uv[parent], uv[child], _bone_color(model, child, markers))
    face = layout["face"]
    rr, cc = polygon(face[:, 1], face[:, 0], shape=(height, width))
    px[rr, cc] = markers.face_color
    for key, color in (("left_wrist", markers.hand_color_left), ("right_wrist", markers.hand_color_right)):
        x, y = layout[key]
        rr, cc = disk((y, x), markers.hand_radius, shape=(height, width))
        px[rr, cc] = color
    return img


@dataclass(frozen=True)
class Box:
    """Half-open pixel box ``[x0, x1) x [y0, y1)`` plus the marker centroid it was built from."""

    x0: int
    y0: int
    x1: int
    y1: int
    center: tuple

    def crop(self, img):
        return Image(img.pixels[self.y0:self.y1, self.x0:self.x1].copy())


def _centroid(img, color):
    mask = np.all(img.pixels == np.asarray(color, dtype=np.uint8), axis=2)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return float(xs.mean()), float(ys.mean())


def _box(center, crop_size, width, height):
    x0 = int(round(center[0] - crop_size / 2))
    y0 = int(round(center[1] - crop_size / 2))
    x0 = min(max(x0, 0), width - crop_size)
    y0 = min(max(y0, 0), height - crop_size)
    return Box(x0, y0, x0 + crop_size, y0 + crop_size, center)


def find_part_crops(img, crop_size=128, markers=PartMarkers()):
    """Locate face, left hand and right hand by exact marker color; return in-frame crop boxes."""
    if crop_size < 1 or crop_size > min(img.width, img.height):
        raise ValueError(f"crop_size {crop_size} does not fit a {img.width}x{img.height} image")
    boxes = {}
    for part, color in (("face", markers.face_color), ("left_hand", markers.hand_color_left),
                        ("right_hand", markers.hand_color_right)):
        c = _centroid(img, color)
        if c is None:
            raise MarkerMissing(part)
        boxes[part] = _box(c, crop_size, img.width, img.height)
    return boxes


def write_ppm(img, path):
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path):
    """Read a binary P6 image with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeader(f"{path}: truncated header")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise MalformedHeader(f"{path}: not a binary PPM (P6)")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise MalformedHeader(f"{path}: non-numeric header field") from exc
    if maxval != 255 or width <= 0 or height <= 0:
        raise MalformedHeader(f"{path}: unsupported size or maxval")
    payload = data[pos + 1:]
    if len(payload) != 3 * width * height:
        raise MalformedHeader(f"{path}: expected {3 * width * height} pixel bytes, found {len(payload)}")
    return Image(np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy())


def render_sequence(model, seq, global_orient, camera, out_dir, size=(512, 512), markers=PartMarkers()):
    """Render every frame to ``out_dir/frame_%06d.ppm``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, frame in enumerate(seq.frames):
        path = os.path.join(out_dir, FRAME_PATTERN % i)
        write_ppm(render_skeleton(model, frame, global_orient, camera, size, markers), path)
        paths.append(path)
    return paths
