import json

import numpy as np
import pytest
from astropy.table import Table

from royolo import eval_metrics
from royolo.eval_metrics import EvalConfig
from royolo.geometry import RotatedBox
from royolo.head_decode import Detection
from royolo.target_assign import Target


def square(x, y, size=20.0, theta=0.0):
    return RotatedBox(x, y, size, size, theta)


def hand_built_set():
    truths = [Target(square(100, 100), 0), Target(square(200, 100), 0), Target(square(300, 100), 0)]
    dets = [Detection(square(100, 100), 0, 0.9),
            Detection(square(205, 100), 0, 0.8),    # IoU 0.6 with the second truth
            Detection(square(100, 100), 0, 0.7),    # duplicate of the first
            Detection(square(500, 500), 0, 0.3)]
    return [dets], [truths]


def separated_set(seed=0, n_images=4):
    """Truths on a coarse grid; every detection only touches its own truth."""
    rng = np.random.default_rng(seed)
    dets_by_image, truths_by_image = [], []
    for _ in range(n_images):
        truths, dets = [], []
        for gx in range(5):
            for gy in range(5):
                if rng.uniform() < 0.4:
                    continue
                box = RotatedBox(60 + 120 * gx, 60 + 120 * gy, rng.uniform(20, 40),
                                 rng.uniform(20, 40), rng.uniform(0, 90))
                cls = int(rng.integers(3))
                truths.append(Target(box, cls))
                for _ in range(int(rng.integers(0, 3))):
                    jit = box._replace(x=box.x + rng.uniform(-8, 8), y=box.y + rng.uniform(-8, 8),
                                       theta=(box.theta + rng.uniform(0, 5)) % 90)
                    dets.append(Detection(jit, cls, float(rng.uniform(0.05, 1.0))))
        truths_by_image.append(truths)
        dets_by_image.append(dets)
    return dets_by_image, truths_by_image


def test_eval_config():
    cfg = EvalConfig()
    assert len(cfg.iou_thresholds) == 10
    assert cfg.iou_thresholds[0] == 0.5 and cfg.iou_thresholds[-1] == 0.95
    assert len(cfg.conf_sweep) == 19

    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.5, 0.5))
    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.0, 0.5))
    with pytest.raises(ValueError):
        EvalConfig(backend='fast')

    return


def test_match_thresholds():
    truths = [Target(square(200, 100), 0)]
    dets = [Detection(square(205, 100), 0, 0.8)]

    res = eval_metrics.match_detections(dets, truths, 0.5)
    assert res.pairs == [(0, 0)]
    assert res.tp.tolist() == [True]

    res = eval_metrics.match_detections(dets, truths, 0.75)
    assert res.pairs == []
    assert res.unmatched_dets == [0]
    assert res.unmatched_truths == [0]

    return


def test_match_duplicates():
    truths = [Target(square(100, 100), 0)]
    dets = [Detection(square(101, 100), 0, 0.5), Detection(square(100, 100), 0, 0.9)]

    res = eval_metrics.match_detections(dets, truths, 0.5)
    assert res.pairs == [(1, 0)]
    assert res.tp.tolist() == [False, True]

    return


def test_match_picks_highest_overlap():
    truths = [Target(square(104, 100), 0), Target(square(101, 100), 0)]
    dets = [Detection(square(100, 100), 0, 0.9)]
    assert eval_metrics.match_detections(dets, truths, 0.5).pairs == [(0, 1)]

    return


def test_match_classes():
    truths = [Target(square(100, 100), 0)]
    dets = [Detection(square(100, 100), 1, 0.9)]
    assert eval_metrics.match_detections(dets, truths, 0.5).pairs == []
    assert eval_metrics.match_detections(dets, truths, 0.5, agnostic=True).pairs == [(0, 0)]

    return


def test_average_precision():
    assert eval_metrics.average_precision([0.9, 0.8], [True, True], 2) == 1.0
    assert eval_metrics.average_precision([], [], 3) == 0.0
    assert eval_metrics.average_precision([0.9, 0.4], [True, False], 1) == 1.0
    assert eval_metrics.average_precision([0.9], [True], 0) is None

    # a false positive ranked first: envelope 0.5 over recall [0, 1]
    np.testing.assert_almost_equal(
        eval_metrics.average_precision([0.9, 0.4], [False, True], 1), 0.5)

    # half the truths found with no false positives
    np.testing.assert_almost_equal(
        eval_metrics.average_precision([0.9], [True], 2), 51 / 101)

    return


def test_pr_curve():
    scores, precision, recall = eval_metrics.pr_curve([0.2, 0.9, 0.5], [True, True, False], 4)
    np.testing.assert_array_equal(scores, [0.9, 0.5, 0.2])
    np.testing.assert_allclose(precision, [1.0, 0.5, 2 / 3])
    np.testing.assert_allclose(recall, [0.25, 0.25, 0.5])

    return


def test_prf1_hand_built():
    dets, truths = hand_built_set()
    res = eval_metrics.prf1(dets, truths, conf_sweep=(0.5, 0.25), iou_thresholds=(0.5, 0.75))

    np.testing.assert_allclose(res.grid_precision, [[2 / 3, 1 / 3], [1 / 2, 1 / 4]])
    np.testing.assert_allclose(res.grid_recall, [[2 / 3, 1 / 3], [2 / 3, 1 / 3]])
    np.testing.assert_allclose(res.grid_f1, [[2 / 3, 1 / 3], [4 / 7, 2 / 7]])
    np.testing.assert_almost_equal(res.precision, 0.4375)
    np.testing.assert_almost_equal(res.recall, 0.5)
    np.testing.assert_almost_equal(res.f1, 13 / 28)

    return


def test_prf1_empty_detections():
    _, truths = hand_built_set()
    res = eval_metrics.prf1([[]], truths)
    assert res.precision == 0.0
    assert res.recall == 0.0
    assert res.f1 == 0.0

    return


def test_perfect_detector():
    _, truths_by_image = separated_set(seed=3)
    dets_by_image = [[Detection(t.box, t.class_id, 0.99) for t in truths]
                     for truths in truths_by_image]
    report = eval_metrics.evaluate(dets_by_image, truths_by_image)

    assert report.map == pytest.approx(1.0)
    assert report.ap50 == pytest.approx(1.0)
    assert report.ap95 == pytest.approx(1.0)
    assert report.precision == pytest.approx(1.0)
    assert report.recall == pytest.approx(1.0)
    assert report.f1 == pytest.approx(1.0)

    return


def test_empty_detections_report():
    _, truths_by_image = separated_set(seed=4)
    report = eval_metrics.evaluate([[] for _ in truths_by_image], truths_by_image)
    assert report.map == 0.0
    assert report.recall == 0.0
    assert report.n_detections == 0

    return


def test_report_consistency():
    dets_by_image, truths_by_image = separated_set(seed=5)
    report = eval_metrics.evaluate(dets_by_image, truths_by_image)

    stacked = np.vstack(list(report.ap.values()))
    np.testing.assert_allclose(report.ap_per_threshold, stacked.mean(axis=0))
    np.testing.assert_allclose(report.map, stacked.mean())
    assert report.ap50 == report.ap_per_threshold[0]
    assert report.ap75 == report.ap_per_threshold[5]
    assert report.ap95 == report.ap_per_threshold[9]

    for value in (report.map, report.precision, report.recall, report.f1):
        assert 0.0 <= value <= 1.0

    doc = json.loads(json.dumps(report.to_dict()))
    assert set(doc) >= {'mAP', 'AP_50', 'AP_75', 'AP_95', 'precision', 'recall', 'f1'}

    return


def test_ap_does_not_grow_with_threshold():
    for seed in range(5):
        dets_by_image, truths_by_image = separated_set(seed=seed)
        report = eval_metrics.evaluate(dets_by_image, truths_by_image)
        for values in report.ap.values():
            assert np.all(np.diff(values) <= 1e-12)

    return


def test_classes_without_truth_are_excluded():
    truths = [[Target(square(100, 100), 0)]]
    dets = [[Detection(square(100, 100), 0, 0.9), Detection(square(300, 300), 4, 0.9)]]
    report = eval_metrics.evaluate(dets, truths)

    assert list(report.ap) == [0]
    assert report.map == pytest.approx(1.0)

    no_truth = eval_metrics.evaluate(dets, [[]])
    assert no_truth.map == 0.0
    assert no_truth.ap50 is None

    return


def test_horizontal_backend_matches_exact():
    rng = np.random.default_rng(6)
    truths_by_image, dets_by_image = [], []
    for _ in range(3):
        truths = [Target(RotatedBox(rng.uniform(50, 590), rng.uniform(50, 590),
                                    rng.uniform(20, 60), rng.uniform(20, 60), 0.0),
                         int(rng.integers(2)))
                  for _ in range(6)]
        dets = [Detection(t.box._replace(x=t.box.x + rng.normal(0, 4), y=t.box.y + rng.normal(0, 4)),
                          t.class_id, float(rng.uniform(0.05, 1.0)))
                for t in truths for _ in range(2)]
        truths_by_image.append(truths)
        dets_by_image.append(dets)

    exact = eval_metrics.evaluate(dets_by_image, truths_by_image, EvalConfig(backend='exact'))
    horiz = eval_metrics.evaluate(dets_by_image, truths_by_image, EvalConfig(backend='horizontal'))

    np.testing.assert_allclose(horiz.ap_per_threshold, exact.ap_per_threshold, atol=1e-12)
    assert horiz.precision == pytest.approx(exact.precision, abs=1e-12)
    assert horiz.f1 == pytest.approx(exact.f1, abs=1e-12)

    return


def test_masked_backend_is_close():
    dets_by_image, truths_by_image = separated_set(seed=7, n_images=2)
    exact = eval_metrics.evaluate(dets_by_image, truths_by_image)
    masked = eval_metrics.evaluate(dets_by_image, truths_by_image, EvalConfig(backend='masked'))
    assert abs(masked.ap_per_threshold[0] - exact.ap_per_threshold[0]) < 0.15

    return


def test_misaligned_inputs():
    with pytest.raises(ValueError):
        eval_metrics.evaluate([[]], [[], []])

    return


def test_write_pr_curves(tmp_path):
    dets, truths = hand_built_set()
    report = eval_metrics.evaluate(dets, truths)
    paths = eval_metrics.write_pr_curves(report, str(tmp_path))

    assert len(paths) == 1
    tab = Table.read(paths[0], format='ascii.ecsv')
    assert tab.colnames == ['confidence', 'precision', 'recall']
    np.testing.assert_allclose(tab['confidence'], [0.9, 0.8, 0.7, 0.3])
    assert tab.meta['class_id'] == 0

    return
