import numpy as np
import pytest

from royolo import geometry, mask_raster
from royolo.bench import sample_box_pairs
from royolo.geometry import RotatedBox
from royolo.mask_raster import Mask, MaskCache, MaskConfig

# One cell per pixel
PIXEL_CFG = MaskConfig(h_m=640, w_m=640, image_w=640, image_h=640)


def test_mask_config():
    cfg = MaskConfig()
    assert (cfg.h_m, cfg.w_m) == (550, 550)
    np.testing.assert_almost_equal(cfg.scale_x, 550 / 640)

    small = cfg.with_size(64)
    assert (small.h_m, small.w_m, small.union_mode) == (64, 64, 'corrected')

    with pytest.raises(ValueError):
        MaskConfig(h_m=0)
    with pytest.raises(ValueError):
        MaskConfig(union_mode='sum')

    return


def test_mask_counts():
    mask = mask_raster.get_mask(RotatedBox(100.0, 100.0, 10.0, 10.0, 0.0), PIXEL_CFG)
    assert mask.count == 100
    assert mask.data.shape == (640, 640)
    assert mask.data[95:105, 95:105].all()

    full = mask_raster.get_mask(RotatedBox(320, 320, 640, 640, 0.0), MaskConfig())
    assert full.count == 550 * 550

    diamond = mask_raster.get_mask(RotatedBox(320, 320, 200, 200, 45.0), PIXEL_CFG)
    assert abs(diamond.count - 40000) <= 0.02 * 40000

    outside = mask_raster.get_mask(RotatedBox(-500, -500, 50, 50, 30.0), PIXEL_CFG)
    assert outside.count == 0

    return


def test_mask_from_array():
    data = np.zeros((5, 13), dtype=np.uint8)
    data[1:4, 2:11] = 1
    mask = Mask.from_array(data)
    assert mask.count == 27
    assert len(mask) == 27
    np.testing.assert_array_equal(mask.data, data)

    with pytest.raises(ValueError):
        Mask.from_array(np.zeros(5))

    return


def test_identical_boxes():
    box = RotatedBox(300, 250, 120, 40, 33.0)
    assert mask_raster.iou_ro(box, box, MaskConfig()) == 1.0

    literal = MaskConfig(union_mode='paper_literal')
    assert mask_raster.iou_ro(box, box, literal) == 0.5

    return


def test_empty_masks():
    a = RotatedBox(-500, -500, 50, 50, 10.0)
    b = RotatedBox(-800, -800, 50, 50, 10.0)
    assert mask_raster.iou_ro(a, b, MaskConfig()) == 0.0

    small = mask_raster.get_mask(RotatedBox(10, 10, 5, 5, 0.0), MaskConfig(h_m=8, w_m=8))
    big = mask_raster.get_mask(RotatedBox(10, 10, 5, 5, 0.0), MaskConfig())
    with pytest.raises(ValueError):
        mask_raster.intersection_count(small, big)

    return


def test_unit_square_needs_cells():
    # Under one mask cell a unit square may not cover any cell center.
    a = RotatedBox(320, 320, 200, 200, 0.0)
    b = RotatedBox(320, 320, 200, 200, 45.0)
    np.testing.assert_allclose(mask_raster.iou_ro(a, b, MaskConfig()),
                               geometry.iou_exact(a, b), atol=0.01)

    return


def test_aligned_boxes_are_exact():
    a = RotatedBox(100, 100, 40, 20, 0.0)
    b = RotatedBox(110, 105, 40, 20, 0.0)
    assert mask_raster.iou_ro(a, b, PIXEL_CFG) == pytest.approx(geometry.iou_horizontal(a, b),
                                                                abs=1e-12)

    return


def test_literal_union_relation():
    literal = MaskConfig(union_mode='paper_literal')
    for a, b in sample_box_pairs(50, seed=2):
        cor = mask_raster.iou_ro(a, b, MaskConfig())
        lit = mask_raster.iou_ro(a, b, literal)
        assert 0.0 <= lit <= 0.5
        np.testing.assert_almost_equal(lit, cor / (1 + cor), decimal=12)

    return


def test_accuracy_against_exact():
    pairs = sample_box_pairs(1000, seed=0)
    exact = np.array([geometry.iou_exact(a, b) for a, b in pairs])
    masked = np.array([mask_raster.iou_ro(a, b, MaskConfig()) for a, b in pairs])
    errors = np.abs(masked - exact)

    assert errors.max() <= 0.05
    assert np.median(errors) <= 0.02

    return


def test_error_shrinks_with_mask_size():
    pairs = sample_box_pairs(200, seed=1)
    exact = np.array([geometry.iou_exact(a, b) for a, b in pairs])

    mean_errors = []
    for size in (64, 128, 256, 550):
        cfg = MaskConfig().with_size(size)
        masked = np.array([mask_raster.iou_ro(a, b, cfg) for a, b in pairs])
        mean_errors.append(np.abs(masked - exact).mean())

    for coarse, fine in zip(mean_errors[:-1], mean_errors[1:]):
        assert fine <= coarse * 1.05

    return


def test_mask_cache():
    boxes = [RotatedBox(200, 200, 80, 40, 20.0),
             RotatedBox(210, 200, 80, 40, 25.0),
             RotatedBox(400, 400, 60, 60, 0.0)]
    cache = MaskCache(boxes, MaskConfig())
    assert len(cache) == 0

    first = cache.iou(0, 1)
    cache.iou(0, 2)
    assert len(cache) == 3
    assert cache.iou(1, 2) == 0.0
    assert len(cache) == 3
    assert cache[0] is cache[0]

    assert first == mask_raster.iou_ro(boxes[0], boxes[1], MaskConfig())

    return
