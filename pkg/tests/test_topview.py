import numpy as np
import pytest

from conftest import checkerboard_mae
from polyslot.camera import FisheyeCamera, fixture_rig_path, load_rig, look_at
from polyslot.topview import (TopviewSpec, build_remap_table, ground_to_raster,
                              raster_to_ground, synthesize_topview)


def pinhole_down(x, y, h, f, size):
    r, t = look_at((x, y, h), (x, y, 0.0))
    c = (size - 1) / 2
    return FisheyeCamera((f, f), (c, c), (0, 0, 0, 0), r, t, image_size=(size, size),
                         model="pinhole", name=f"cam{x:+.0f}")


@pytest.fixture(scope="module")
def fixture_table():
    return build_remap_table(load_rig(fixture_rig_path()), TopviewSpec())


def test_default_spec():
    spec = TopviewSpec()
    assert spec.meters_per_pixel == 0.0390625
    assert (spec.width, spec.height) == (640, 640)


def test_spec_parse_and_str():
    spec = TopviewSpec.parse("320x320:12.5")
    assert spec.resolution == (320, 320) and spec.coverage == (12.5, 12.5)
    assert TopviewSpec.parse(str(TopviewSpec())) == TopviewSpec()
    mpp = 0.023744855963
    odd = TopviewSpec((300, 200), (300 * mpp, 200 * mpp))
    assert TopviewSpec.parse(str(odd)) == odd
    for bad in ("640:25", "640x640", "axb:1", "640x640:25x10"):
        with pytest.raises(ValueError):
            TopviewSpec.parse(bad)


@pytest.mark.parametrize("ground, pixel", [((0, 0), (320, 320)), ((12.5, 0), (640, 320)),
                                           ((0, 12.5), (320, 0)), ((-12.5, -12.5), (0, 640))])
def test_ground_to_raster_examples(ground, pixel):
    np.testing.assert_allclose(ground_to_raster(TopviewSpec(), ground), pixel)


def test_raster_round_trip(rng):
    spec = TopviewSpec()
    pts = rng.uniform(-12.5, 12.5, (1000, 2))
    np.testing.assert_allclose(raster_to_ground(spec, ground_to_raster(spec, pts)), pts,
                               rtol=0, atol=1e-12)


def test_single_downward_camera_covers_everything():
    cam = pinhole_down(0, 0, 20.0, 300.0, 1000)
    table = build_remap_table([cam], TopviewSpec((64, 64), (25, 25)))
    assert table.covered.all()
    np.testing.assert_array_equal(table.weight, 1.0)


def test_disjoint_cameras_partition_without_blending():
    rig = [pinhole_down(-8, 0, 5.0, 200.0, 400), pinhole_down(8, 0, 5.0, 200.0, 400)]
    table = build_remap_table(rig, TopviewSpec((128, 128), (25, 25)))
    assert not table.seam_mask().any()
    assert set(np.unique(table.weight)) <= {0.0, 1.0}
    ids = table.camera_ids()
    g_left = ids[:, :40][table.covered[:, :40]]
    assert (g_left == 0).all()


def test_camera_with_no_coverage_warns():
    r, t = look_at((0, 0, 1), (0, 0, 5))  # pointing at the sky
    away = FisheyeCamera((300, 300), (639.5, 399.5), rotation=r, translation=t, max_fov_deg=120)
    with pytest.warns(RuntimeWarning, match="covers no topview pixel"):
        build_remap_table([away], TopviewSpec((32, 32), (25, 25)))


def test_fixture_rig_coverage(fixture_table):
    assert fixture_table.coverage_fraction > 0.95
    w = fixture_table.weight.sum(axis=0)
    np.testing.assert_allclose(w[fixture_table.covered], 1.0)


def test_constant_gray_and_linearity(fixture_table):
    images = [np.full((800, 1280, 3), 100, np.uint8) for _ in range(4)]
    top = synthesize_topview(fixture_table, images)
    cov = fixture_table.covered
    assert (top[cov] == 100).all() and (top[~cov] == 0).all()
    rng = np.random.default_rng(3)
    imgs = [rng.uniform(0, 1, (800, 1280, 3)) for _ in range(4)]
    a = synthesize_topview(fixture_table, imgs)
    b = synthesize_topview(fixture_table, [2.5 * im for im in imgs])
    np.testing.assert_allclose(b[cov], 2.5 * a[cov], rtol=1e-12)


def test_synthesis_is_deterministic(fixture_table, data_dir):
    from PIL import Image
    images = [np.asarray(Image.open(data_dir / f"fixture_{n}.png").convert("RGB"))
              for n in fixture_table.camera_names]
    a = synthesize_topview(fixture_table, images)
    b = synthesize_topview(fixture_table, images)
    np.testing.assert_array_equal(a, b)
    golden = np.asarray(Image.open(data_dir / "golden_topview.png").convert("RGB"))
    np.testing.assert_array_equal(a, golden)


def test_synthesis_validates_images(fixture_table):
    with pytest.raises(ValueError, match="expected 4 images"):
        synthesize_topview(fixture_table, [np.zeros((800, 1280, 3), np.uint8)])
    with pytest.raises(ValueError, match="calibration expects 1280x800"):
        synthesize_topview(fixture_table, [np.zeros((10, 10, 3), np.uint8)] * 4)


def test_near_field_checkerboard_is_sharp():
    mae, n = checkerboard_mae(1.0, radius_m=5.0)
    assert n > 10000
    assert mae < 5.0
