import numpy as np
import pytest
from PIL import Image
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import square
from polyslot.camera import fixture_rig_path, load_rig
from polyslot.dataset import LabeledFrame, SlotAugmenter
from polyslot.decode import HeadSpec, SlotDecoder, encode
from polyslot.geometry import PolygonSlot
from polyslot.loss import SlotFitter
from polyslot.topview import TopviewStitcher


def test_params_round_trip_and_clone():
    for est in (SlotFitter(lr=0.1), SlotDecoder(conf_threshold=0.4), SlotAugmenter(p_hsv=0.0)):
        params = est.get_params()
        twin = clone(est)
        assert twin.get_params() == params
        twin.set_params(**params)
        assert twin is not est


def test_fitter_predict_and_score():
    gt = square()
    init = PolygonSlot(gt.corners + [0.5, 0.0])
    f = SlotFitter(steps=500).fit([init], [gt])
    assert f.predict().shape == (1, 8)
    np.testing.assert_allclose(f.predict()[0].reshape(4, 2), gt.corners, atol=1e-2)
    assert -1e-3 < f.score(None, [gt]) <= 0
    assert f.loss_[0] < 1e-3


def test_fitter_accepts_arrays():
    gt = square().corners.reshape(1, 8)
    f = SlotFitter(steps=50).fit(gt + 0.1, gt)
    assert f.corners_.shape == (1, 8)


def test_fitter_requires_fit_and_matching_lengths():
    with pytest.raises(NotFittedError):
        SlotFitter().predict()
    with pytest.raises(ValueError):
        SlotFitter().fit([square()], [square(), square()])


def test_decoder_transform_single_and_batch():
    head = HeadSpec()
    slots = [PolygonSlot([[100, 300], [160, 300], [100, 428], [160, 428]], confidence=0.9)]
    raw = encode(slots, head)
    dec = SlotDecoder().fit()
    one = dec.transform(raw)
    assert len(one) == 1
    batch = dec.transform(np.stack([raw, encode([], head)]))
    assert [len(b) for b in batch] == [1, 0]


def test_decoder_shape_mismatch():
    with pytest.raises(ValueError):
        SlotDecoder(grid=(10, 10)).fit().transform(encode([], HeadSpec()))


def test_augmenter_seeded_and_identity():
    frame = LabeledFrame("f.png", [PolygonSlot([[100, 300], [160, 300], [100, 428], [160, 428]])])
    a = SlotAugmenter(random_state=3).fit_transform([frame] * 5)
    b = SlotAugmenter(random_state=3).fit_transform([frame] * 5)
    assert a == b
    off = SlotAugmenter(p_flip_lr=0, p_flip_ud=0, p_rotate=0, p_hsv=0).transform([frame])
    assert off == [frame]


def test_augmenter_always_flip():
    frame = LabeledFrame("f.png", [PolygonSlot([[100, 300], [160, 300], [100, 428], [160, 428]])])
    out = SlotAugmenter(p_flip_lr=1, p_flip_ud=0, p_rotate=0, p_hsv=0).transform([frame])[0]
    np.testing.assert_allclose(out.slots[0].corners,
                               [[480, 300], [540, 300], [480, 428], [540, 428]])


def test_stitcher_matches_golden(data_dir):
    rig = load_rig(fixture_rig_path())
    images = [np.asarray(Image.open(data_dir / f"fixture_{c.name}.png").convert("RGB"))
              for c in rig]
    st = TopviewStitcher(rig=rig).fit()
    golden = np.asarray(Image.open(data_dir / "golden_topview.png").convert("RGB"))
    np.testing.assert_array_equal(st.transform(images), golden)
    assert st.transform([images, images]).shape == (2, 640, 640, 3)


def test_stitcher_needs_rig():
    with pytest.raises(ValueError):
        TopviewStitcher().fit()
