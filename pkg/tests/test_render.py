import numpy as np
import pytest
from skimage.draw import disk
from skimage.measure import points_in_poly

from speech2pose.exceptions import MalformedHeader, MarkerMissing
from speech2pose.pose import POSE_DIM, PoseSequence
from speech2pose.render import (FRAME_PATTERN, LIMB_PALETTE, Image, PartMarkers, find_part_crops, projected_layout,
                                read_ppm, render_sequence, render_skeleton, write_ppm)


def random_pose(rng):
    p = np.zeros(POSE_DIM)
    p[3:72] = rng.normal(0, 0.15, 69)
    p[72:] = rng.normal(0, 0.5, 34)
    return p


def test_disc_centroid_found():
    img = Image.blank(256, 256)
    m = PartMarkers()
    rr, cc = disk((120, 100), 10, shape=(256, 256))
    img.pixels[rr, cc] = m.hand_color_left
    rr, cc = disk((40, 200), 10, shape=(256, 256))
    img.pixels[rr, cc] = m.hand_color_right
    img.pixels[200:210, 30:50] = m.face_color
    boxes = find_part_crops(img, crop_size=64)
    assert boxes["left_hand"].center == pytest.approx((100.0, 120.0), abs=1e-9)
    assert boxes["face"].center == pytest.approx((39.5, 204.5))
    b = boxes["left_hand"]
    assert (b.x0, b.y0, b.x1, b.y1) == (68, 88, 132, 152)
    assert b.crop(img).pixels.shape == (64, 64, 3)


def test_boxes_clamped_into_frame():
    img = Image.blank(100, 80)
    m = PartMarkers()
    img.pixels[0, 0] = m.face_color
    img.pixels[79, 99] = m.hand_color_left
    img.pixels[40, 50] = m.hand_color_right
    for box in find_part_crops(img, crop_size=32).values():
        assert 0 <= box.x0 and box.x1 <= 100 and 0 <= box.y0 and box.y1 <= 80
        assert box.x1 - box.x0 == 32 and box.y1 - box.y0 == 32


def test_missing_face_marker():
    img = Image.blank(64, 64)
    img.pixels[5, 5] = PartMarkers().hand_color_left
    img.pixels[9, 9] = PartMarkers().hand_color_right
    with pytest.raises(MarkerMissing) as info:
        find_part_crops(img, crop_size=16)
    assert info.value.part == "face"
    with pytest.raises(ValueError):
        find_part_crops(img, crop_size=100)


def test_palette_avoids_marker_colors():
    reserved = set(PartMarkers().reserved)
    assert not reserved & set(LIMB_PALETTE.values())
    with pytest.raises(ValueError):
        PartMarkers(hand_color_left=(1, 2, 3), hand_color_right=(1, 2, 3))


def test_reserved_colors_only_in_marker_regions(skeleton, camera):
    rng = np.random.default_rng(0)
    m = PartMarkers()
    for _ in range(3):
        pose = random_pose(rng)
        img = render_skeleton(skeleton, pose, np.zeros(3), camera)
        layout = projected_layout(skeleton, pose, np.zeros(3), camera)
        px = img.pixels
        for key, color in (("left_wrist", m.hand_color_left), ("right_wrist", m.hand_color_right)):
            ys, xs = np.nonzero(np.all(px == color, axis=2))
            assert len(xs) > 0
            d = np.hypot(xs - layout[key][0], ys - layout[key][1])
            assert d.max() <= m.hand_radius + 1.0
        ys, xs = np.nonzero(np.all(px == m.face_color, axis=2))
        assert len(xs) > 0
        # a pixel counts as inside when any corner of its unit square touches the hull
        corners = [(xs + dx, ys + dy) for dx in (-0.5, 0.5) for dy in (-0.5, 0.5)]
        inside = np.zeros(len(xs), bool)
        for cx, cy in corners:
            inside |= points_in_poly(np.column_stack([cx, cy]), layout["face"])
        assert inside.all()


def test_marker_centroids_match_projection(skeleton, camera):
    rng = np.random.default_rng(1)
    for _ in range(3):
        pose = random_pose(rng)
        img = render_skeleton(skeleton, pose, np.zeros(3), camera)
        layout = projected_layout(skeleton, pose, np.zeros(3), camera)
        boxes = find_part_crops(img)
        assert np.allclose(boxes["left_hand"].center, layout["left_wrist"], atol=1.0)
        assert np.allclose(boxes["right_hand"].center, layout["right_wrist"], atol=1.0)


def test_render_is_deterministic(skeleton, camera):
    pose = random_pose(np.random.default_rng(2))
    a = render_skeleton(skeleton, pose, np.zeros(3), camera, size=(200, 150))
    b = render_skeleton(skeleton, pose, np.zeros(3), camera, size=(200, 150))
    assert a.pixels.shape == (150, 200, 3)
    assert a.tobytes() == b.tobytes()


def test_ppm_bytes_and_round_trip(tmp_path):
    img = Image(np.array([[[255, 0, 0]]], dtype=np.uint8))
    write_ppm(img, tmp_path / "r.ppm")
    assert (tmp_path / "r.ppm").read_bytes() == bytes.fromhex("50 36 0A 31 20 31 0A 32 35 35 0A FF 00 00")
    big = Image(np.random.default_rng(0).integers(0, 256, (7, 5, 3), dtype=np.uint8))
    write_ppm(big, tmp_path / "b.ppm")
    assert read_ppm(tmp_path / "b.ppm").tobytes() == big.tobytes()
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")
    assert read_ppm(tmp_path / "c.ppm").pixels.tolist() == [[[1, 2, 3]]]


def test_ppm_truncated(tmp_path):
    data = (tmp_path / "r.ppm")
    write_ppm(Image.blank(4, 4), data)
    (tmp_path / "t.ppm").write_bytes(data.read_bytes()[:-5])
    with pytest.raises(MalformedHeader):
        read_ppm(tmp_path / "t.ppm")
    (tmp_path / "h.ppm").write_bytes(b"P6\n4")
    with pytest.raises(MalformedHeader):
        read_ppm(tmp_path / "h.ppm")
    (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(MalformedHeader):
        read_ppm(tmp_path / "p3.ppm")


def test_render_sequence_writes_numbered_frames(tmp_path, skeleton, camera):
    seq = PoseSequence(np.zeros((3, POSE_DIM)), 12.0)
    paths = render_sequence(skeleton, seq, np.zeros(3), camera, tmp_path / "frames", size=(64, 64))
    assert [p.rsplit("/", 1)[1] for p in paths] == [FRAME_PATTERN % i for i in range(3)]
    assert read_ppm(paths[0]).width == 64
