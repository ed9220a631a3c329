import numpy as np
import pytest
import yaml

from polyslot.camera import (CalibrationError, FisheyeCamera, fixture_rig_path, load_rig,
                             look_at, rig_from_dict, rig_to_dict, save_rig)

F, H = 400.0, 2.0


def downward(model="pinhole", distortion=(0, 0, 0, 0), h=H):
    r, t = look_at((0.0, 0.0, h), (0.0, 0.0, 0.0))
    return FisheyeCamera((F, F), (639.5, 399.5), distortion, r, t, model=model)


def test_optical_axis_hits_principal_point():
    uv = downward().project_ground_point((0.0, 0.0))
    assert uv == pytest.approx((639.5, 399.5))


def test_pinhole_similar_triangles():
    u, v = downward().project_ground_point((0.7, 0.0))
    assert u == pytest.approx(639.5 + F * 0.7 / H)
    assert v == pytest.approx(399.5)


def test_forward_is_image_up():
    _, v = downward().project_ground_point((0.0, 0.5))
    assert v < 399.5


def test_zero_distortion_pinhole_is_exact(rng):
    cam = downward()
    pts = rng.uniform(-1.5, 1.5, (1000, 2))
    uv, valid = cam.project_ground(pts)
    expected = np.column_stack([639.5 + F * pts[:, 0] / H, 399.5 - F * pts[:, 1] / H])
    assert np.abs(uv[valid] - expected[valid]).max() < 1e-9
    assert valid.mean() > 0.5


def test_kannala_brandt_zero_distortion_is_equidistant():
    cam = downward(model="kannala_brandt")
    u, _ = cam.project_ground_point((H, 0.0))  # 45 degrees off axis
    assert u == pytest.approx(639.5 + F * np.pi / 4)


def test_fixture_rig_round_trip(rng):
    rig = load_rig(fixture_rig_path())
    assert [c.name for c in rig] == ["front", "rear", "left", "right"]
    total = 0
    for cam in rig:
        pts = cam.axis_ground_point() + rng.uniform(-4, 4, (1000, 2))
        uv, valid = cam.project_ground(pts)
        back, ok = cam.unproject_to_ground(uv[valid])
        assert ok.all()
        assert np.abs(back - pts[valid]).max() < 1e-3
        total += valid.sum()
    assert total > 1000


def test_project_marks_behind_camera_invalid():
    cam = downward()
    _, valid = cam.project([[0.0, 0.0, 5.0]])
    assert not valid[0]


def test_project_at_optical_center_raises():
    cam = downward()
    with pytest.raises(ValueError):
        cam.project([cam.position])


def test_unproject_above_horizon_is_invalid():
    r, t = look_at((0, 0, 1), (0, 10, 1))  # looking at the horizon
    cam = FisheyeCamera((F, F), (639.5, 399.5), rotation=r, translation=t)
    _, valid = cam.unproject_to_ground([[639.5, 100.0]])
    assert not valid[0]


def test_rig_dict_round_trip(tmp_path):
    rig = load_rig(fixture_rig_path())
    path = tmp_path / "rig.yaml"
    save_rig(rig, path)
    again = load_rig(path)
    for a, b in zip(rig, again):
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.translation, b.translation)
        assert (a.focal, a.principal, a.distortion, a.image_size, a.name, a.model) == \
               (b.focal, b.principal, b.distortion, b.image_size, b.name, b.model)


def test_bad_rotation_rejected():
    with pytest.raises(CalibrationError):
        FisheyeCamera((F, F), (1, 1), rotation=np.diag([1.0, 1.0, -1.0]))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["cameras"]["front"].pop("focal"), "missing fields"),
    (lambda d: d["cameras"]["front"].update(focal=[-1, 1]), "focal"),
    (lambda d: d["cameras"]["front"].update(model="fisheye9"), "model"),
    (lambda d: d.update(cameras={}), "no cameras"),
])
def test_rig_validation_messages(mutate, message):
    data = rig_to_dict(load_rig(fixture_rig_path()))
    mutate(data)
    with pytest.raises(CalibrationError, match=message):
        rig_from_dict(data)


def test_load_rig_rejects_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("cameras: [unclosed")
    with pytest.raises(CalibrationError):
        load_rig(p)
    p.write_text(yaml.safe_dump({"lenses": 1}))
    with pytest.raises(CalibrationError):
        load_rig(p)
