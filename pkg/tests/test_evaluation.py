import numpy as np
import pytest

from conftest import (brute_ap_101, brute_ap_area, random_convex_quad, random_detection_set,
                      square)
from polyslot.dataset import read_annotations
from polyslot.evaluation import (IOU_THRESHOLDS, average_precision, compute_report,
                                 entrance_accuracy, entrance_correct, match_frame)
from polyslot.geometry import PolygonSlot

SHIFT_07 = 0.3 / 1.7  # unit-width overlap shift giving IoU 0.7 along x


def unit(x, y=0.0, conf=1.0):
    return square(x + 0.5, y + 0.5, 0.5, conf)


def synthetic_set():
    gts = [unit(3 * i) for i in range(10)]
    tps = [unit(3 * i + SHIFT_07, conf=0.5) for i in range(10)]
    fps = [unit(100 + 3 * i, 50, conf=0.5) for i in range(5)]
    return tps + fps, gts


def test_identical_predictions_all_match():
    gts = [unit(0), unit(3)]
    m = match_frame(gts, gts)
    assert [(i, j) for i, j, _ in m.pairs] == [(0, 0), (1, 1)]
    assert all(v == pytest.approx(1.0) for _, _, v in m.pairs)


def test_low_iou_pair_is_fp_and_fn():
    m = match_frame([unit(0.5, conf=0.9)], [unit(0)], 0.5)  # IoU 1/3
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)


def test_one_to_one_constraint():
    g = unit(0)
    m = match_frame([unit(0.1, conf=0.8), unit(0.05, conf=0.9)], [g], 0.5)
    assert [(i, j) for i, j, _ in m.pairs] == [(1, 0)]
    assert m.unmatched_preds == [0]


def test_prediction_takes_highest_iou_gt():
    gts = [unit(0), unit(0.6)]
    m = match_frame([unit(0.5, conf=0.9)], gts, 0.3)
    assert m.pairs[0][1] == 1


def test_perfect_report():
    frames = [([unit(0), unit(3)], [unit(0), unit(3)]), ([unit(7)], [unit(7)])]
    r = compute_report(frames)
    assert (r.precision, r.recall, r.f1, r.map_50, r.map_50_95) == (1, 1, 1, 1, 1)
    assert r.flags == ()


def test_no_predictions_report():
    r = compute_report([([], [unit(0)])])
    assert "no_predictions" in r.flags
    assert r.recall == 0 and r.precision == 0
    assert all(v == 0 for v in r.ap_per_threshold.values())


def test_no_ground_truth_flag():
    r = compute_report([([unit(0, conf=0.9)], [])])
    assert "no_ground_truth" in r.flags and r.recall == 0.0


def test_synthetic_set_report():
    preds, gts = synthetic_set()
    r = compute_report([(preds, gts)])
    assert r.precision == pytest.approx(10 / 15)
    assert r.recall == 1.0
    assert r.f1 == pytest.approx(0.8)
    assert r.ap_per_threshold[0.75] == 0.0
    # all confidences tie: one PR point at recall 1, precision 2/3
    assert r.map_50 == pytest.approx(2 / 3)
    scores = [p.confidence for p in preds]
    hits = [True] * 10 + [False] * 5
    assert r.map_50 == pytest.approx(brute_ap_101(scores, hits, 10))
    assert len(r.ap_per_threshold) == 10
    assert r.map_50_95 == pytest.approx(np.mean(list(r.ap_per_threshold.values())))


def test_golden_files_report(data_dir):
    gt = read_annotations(data_dir / "gt_small.jsonl")
    pred = read_annotations(data_dir / "pred_small.jsonl")
    r = compute_report([(p.slots, g.slots) for p, g in zip(pred, gt)])
    assert (r.tp, r.fp, r.fn) == (2, 1, 1)
    assert r.precision == pytest.approx(2 / 3) and r.recall == pytest.approx(2 / 3)
    # envelope is 1 up to recall 2/3: recall points 0.00..0.66 -> 67 of 101
    assert r.map_50 == pytest.approx(67 / 101)
    assert r.map_50_95 == pytest.approx(67 / 101)


def test_f1_definition():
    preds, gts = synthetic_set()
    r = compute_report([(preds[:12], gts)])
    assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


def test_ap_matches_brute_force_101(rng):
    for _ in range(100):
        s, t, n = random_detection_set(rng, int(rng.integers(1, 60)))
        s = np.round(s, 1)  # force ties
        assert average_precision(s, t, n) == pytest.approx(brute_ap_101(s, t, n), abs=1e-12)


def test_ap_close_to_exact_area_on_small_cases():
    # precision 1 up to recall 1/2 then nothing: area 1/2; 101 points give 51/101
    assert brute_ap_area([0.9], [True], 2) == 0.5
    assert average_precision([0.9], [True], 2) == pytest.approx(51 / 101)


def _frames(rng, n_frames=6):
    frames = []
    for _ in range(n_frames):
        gts = [unit(3 * i, 5 * rng.integers(0, 3)) for i in range(int(rng.integers(0, 5)))]
        preds = [PolygonSlot(g.corners + rng.normal(0, 0.15, 2), confidence=float(rng.uniform()))
                 for g in gts if rng.random() < 0.8]
        preds += [random_convex_quad(rng, 20, conf=float(rng.uniform()))
                  for _ in range(int(rng.integers(0, 3)))]
        frames.append((preds, gts))
    return frames


def test_report_invariant_to_frame_order(rng):
    for _ in range(10):
        frames = _frames(rng)
        a = compute_report(frames)
        b = compute_report(frames[::-1])
        assert (a.precision, a.recall, a.f1) == (b.precision, b.recall, b.f1)
        for t in IOU_THRESHOLDS:
            assert a.ap_per_threshold[t] == pytest.approx(b.ap_per_threshold[t], abs=1e-12)


def test_false_positive_never_helps(rng):
    for _ in range(20):
        frames = _frames(rng)
        a = compute_report(frames)
        fp = square(500, 500, conf=float(rng.uniform(0.3, 1.0)))
        frames[0] = (frames[0][0] + [fp], frames[0][1])
        b = compute_report(frames)
        assert b.precision <= a.precision + 1e-12
        assert b.map_50 <= a.map_50 + 1e-12


def test_true_positive_never_hurts_recall(rng):
    for _ in range(20):
        frames = _frames(rng)
        a = compute_report(frames)
        g = unit(40, 40)
        frames[0] = (frames[0][0] + [unit(40, 40, conf=0.9)], frames[0][1] + [g])
        b = compute_report(frames)
        assert b.recall >= a.recall - 1e-12


def test_matched_gts_shrink_with_threshold(rng):
    for _ in range(50):
        (preds, gts), = _frames(rng, 1)
        preds = [p.replace(confidence=0.5) for p in preds]
        lo = {j for _, j, _ in match_frame(preds, gts, 0.5).pairs}
        hi = {j for _, j, _ in match_frame(preds, gts, 0.8).pairs}
        assert hi <= lo


def test_entrance_accuracy_examples():
    g = square()
    same = match_frame([g], [g])
    assert entrance_accuracy(same, [g], [g]) == 1.0
    swapped = PolygonSlot(g.corners[[3, 2, 1, 0]])
    m = match_frame([swapped], [g])
    assert m.pairs[0][2] == pytest.approx(1.0)
    assert entrance_accuracy(m, [swapped], [g]) == 0.0
    assert entrance_accuracy(match_frame([], [g]), [], [g]) == 0.0


@pytest.mark.parametrize("deg, ok", [(3.0, True), (-4.9, True), (6.0, False)])
def test_entrance_angle_tolerance(deg, ok):
    g = square(0, 0, 5.0)
    t = np.radians(deg)
    r = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    p = PolygonSlot(g.corners @ r.T)
    assert entrance_correct(p, g, 5.0) is ok


def test_report_text_has_every_field():
    preds, gts = synthetic_set()
    text = compute_report([(preds, gts)]).to_text(per_frame=True)
    for key in ("precision: 0.666667", "recall: 1.000000", "f1:", "map_50:", "map_50_95:",
                "ap@0.75: 0.000000", "flags: none", "frame 0: tp 10 fp 5 fn 0"):
        assert key in text
