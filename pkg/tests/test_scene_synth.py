import os

import numpy as np
import pytest

from royolo import data, geometry, scene_synth
from royolo.data import LabeledScene, SceneObject
from royolo.geometry import RotatedBox
from royolo.scene_synth import SceneSpec
from tests import oracles


def center_scene():
    objects = [SceneObject(RotatedBox(300, 310, 80, 40, 20.0), 0),
               SceneObject(RotatedBox(330, 300, 60, 60, 65.0), 1),
               SceneObject(RotatedBox(280, 350, 30, 90, 0.0), 2)]
    return LabeledScene('center', 640, 640, objects)


def pairwise_ious(scene):
    boxes = [o.box for o in scene.objects]
    return [geometry.iou_exact(a, b) for i, a in enumerate(boxes) for b in boxes[i + 1:]]


def test_scene_spec_validation():
    assert SceneSpec().n_classes == 6

    with pytest.raises(ValueError):
        SceneSpec(n_objects=(3, 1))
    with pytest.raises(ValueError):
        SceneSpec(overlap_cap=1.5)
    with pytest.raises(ValueError):
        SceneSpec(class_sizes=((10.0, 0.0),))
    with pytest.raises(ValueError):
        SceneSpec(angle_range=(10.0, 100.0))

    return


def test_generate_nothing():
    assert scene_synth.generate(SceneSpec(), 0) == []

    with pytest.raises(ValueError):
        scene_synth.generate(SceneSpec(), -1)

    return


def test_one_object_per_image():
    spec = SceneSpec(n_objects=(1, 1), seed=3)
    scenes = scene_synth.generate(spec, 20)

    assert len(scenes) == 20
    for scene in scenes:
        assert len(scene.objects) == 1
        box = scene.objects[0].box
        quad = geometry.corners(box)
        assert np.all(quad >= -1e-9)
        assert np.all(quad[:, 0] <= spec.image_w + 1e-9)
        assert np.all(quad[:, 1] <= spec.image_h + 1e-9)
        assert 0.0 <= box.theta < 90.0
        assert 0 <= scene.objects[0].class_id < spec.n_classes

    return


def test_overlap_cap():
    spec = SceneSpec(n_objects=(8, 8), overlap_cap=0.1, seed=11)
    for scene in scene_synth.generate(spec, 5):
        assert len(scene.objects) == 8
        assert all(v <= 0.1 for v in pairwise_ious(scene))

    return


def test_unsatisfiable_spec():
    spec = SceneSpec(n_objects=(30, 30), class_sizes=((300.0, 300.0),), overlap_cap=0.0,
                     max_retries=20)
    with pytest.raises(RuntimeError):
        scene_synth.generate(spec, 1)

    return


def test_generation_is_reproducible(tmp_path):
    spec = SceneSpec(seed=42)
    first = tmp_path / 'a.jsonl'
    second = tmp_path / 'b.jsonl'
    data.write_labels(scene_synth.generate(spec, 6), first)
    data.write_labels(scene_synth.generate(spec, 6, n_jobs=2), second)

    assert first.read_bytes() == second.read_bytes()

    other = tmp_path / 'c.jsonl'
    data.write_labels(scene_synth.generate(SceneSpec(seed=43), 6), other)
    assert first.read_bytes() != other.read_bytes()

    return


def test_snapped_angles():
    spec = SceneSpec(angle_granularity=18, seed=5)
    centers = {(i + 0.5) * 5.0 for i in range(18)}
    for scene in scene_synth.generate(spec, 5):
        for obj in scene.objects:
            assert obj.box.theta in centers

    return


def test_rotate():
    scene = LabeledScene('one', 640, 640, [SceneObject(RotatedBox(320, 320, 40, 20, 60.0), 0)])
    assert scene_synth.augment_labels(scene, 'rotate', 0.0).objects == scene.objects

    box = scene_synth.augment_labels(scene, 'rotate', 45.0).objects[0].box
    np.testing.assert_allclose(box, [320, 320, 20, 40, 15.0], atol=1e-9)
    assert oracles.corner_sets_equal(
        geometry.corners(box),
        geometry.corners(RotatedBox(320, 320, 40, 20, 105.0)), tol=1e-9)

    return


def test_shrink():
    scene = center_scene()
    shrunk = scene_synth.augment_labels(scene, 'shrink', 0.5)
    for before, after in zip(scene.objects, shrunk.objects):
        np.testing.assert_almost_equal(after.box.area, 0.25 * before.box.area)
        assert after.box.theta == before.box.theta
        assert after.class_id == before.class_id

    with pytest.raises(ValueError):
        scene_synth.augment_labels(scene, 'shrink', 0.0)

    return


@pytest.mark.parametrize('op,value', [('rotate', 33.0), ('rotate', -120.0), ('hflip', None),
                                      ('vflip', None), ('translate', (25.0, -40.0))])
def test_rigid_ops_keep_ious(op, value):
    scene = center_scene()
    moved = scene_synth.augment_labels(scene, op, value, min_visible=0.0)

    assert len(moved.objects) == len(scene.objects)
    np.testing.assert_allclose(pairwise_ious(moved), pairwise_ious(scene), atol=1e-9)
    for obj in moved.objects:
        assert 0.0 <= obj.box.theta < 90.0

    return


def test_hflip_mirrors_corners():
    box = RotatedBox(100, 200, 80, 40, 30.0)
    flipped = scene_synth.transform_box(box, 'hflip', None, 640, 640)

    mirrored = geometry.corners(box)
    mirrored[:, 0] = 640 - mirrored[:, 0]
    assert oracles.corner_sets_equal(geometry.corners(flipped), mirrored, tol=1e-9)

    return


def test_border_policies():
    scene = LabeledScene('edge', 640, 640,
                         [SceneObject(RotatedBox(650, 320, 100, 40, 0.0), 0),
                          SceneObject(RotatedBox(320, 320, 40, 40, 0.0), 1)])

    # the first box ends up 30% inside
    dropped = scene_synth.augment_labels(scene, 'translate', (10.0, 0.0), min_visible=0.5)
    assert [o.class_id for o in dropped.objects] == [1]

    dropped = scene_synth.augment_labels(scene, 'translate', (10.0, 0.0), min_visible=0.2,
                                         border='drop')
    assert [o.class_id for o in dropped.objects] == [1]

    clipped = scene_synth.augment_labels(scene, 'translate', (10.0, 0.0), min_visible=0.2)
    box = clipped.objects[0].box
    assert box.w * box.h == pytest.approx(30.0 * 40.0)
    np.testing.assert_allclose(box.x, 625.0)
    assert scene_synth.visible_fraction(box, 640, 640) == pytest.approx(1.0)

    partial = LabeledScene('part', 640, 640, [SceneObject(RotatedBox(600, 320, 100, 60, 0.0), 0)])
    box = scene_synth.augment_labels(partial, 'translate', (20.0, 0.0)).objects[0].box
    assert oracles.corner_sets_equal(geometry.corners(box),
                                     geometry.corners(RotatedBox(605, 320, 70, 60, 0.0)), tol=1e-6)

    with pytest.raises(ValueError):
        scene_synth.augment_labels(scene, 'translate', (1.0, 0.0), border='wrap')
    with pytest.raises(ValueError):
        scene_synth.augment_labels(scene, 'twist', 1.0)

    return


@pytest.mark.parametrize('border', ['clip', 'drop'])
def test_augmented_boxes_stay_inside(border):
    rng = np.random.default_rng(9)
    scenes = scene_synth.generate(SceneSpec(seed=2), 4)
    ops = [('rotate', 30.0), ('rotate', -75.0), ('translate', (150.0, -90.0)),
           ('translate', (-300.0, 40.0)), ('shrink', 1.4)]
    for scene in scenes:
        for op, value in ops:
            moved = scene_synth.augment_labels(scene, op, value, border=border)
            for obj in moved.objects:
                quad = geometry.corners(obj.box)
                assert np.all(quad >= -1e-6)
                assert np.all(quad[:, 0] <= 640 + 1e-6)
                assert np.all(quad[:, 1] <= 640 + 1e-6)

        warp = np.eye(3)
        warp[:2, 2] = rng.uniform(-200, 200, 2)
        warp[2, :2] = rng.uniform(-2e-4, 2e-4, 2)
        for obj in scene_synth.augment_labels(scene, 'perspective', warp, border=border).objects:
            quad = geometry.corners(obj.box)
            assert np.all(quad >= -1e-6) and np.all(quad <= 640 + 1e-6)

    return


def test_clip_box():
    box = scene_synth.clip_box(RotatedBox(0, 0, 40, 40, 45.0), 640, 640)
    quad = geometry.corners(box)
    assert np.all(quad >= -1e-6) and np.all(quad <= 640 + 1e-6)
    assert scene_synth.clip_box(RotatedBox(-100, -100, 10, 10, 30.0), 640, 640) is None

    return


def test_visible_fraction():
    assert scene_synth.visible_fraction(RotatedBox(320, 320, 50, 50, 30.0), 640, 640) == pytest.approx(1.0)
    np.testing.assert_almost_equal(
        scene_synth.visible_fraction(RotatedBox(0, 0, 50, 50, 0.0), 640, 640), 0.25)

    return


def test_perspective_identity():
    scene = center_scene()
    warped = scene_synth.augment_labels(scene, 'perspective', np.eye(3))
    for before, after in zip(scene.objects, warped.objects):
        assert oracles.corner_sets_equal(geometry.corners(before.box),
                                         geometry.corners(after.box), tol=1e-6)

    return


def test_rasterize(tmp_path):
    scene = center_scene()
    image = scene_synth.rasterize(scene, seed=1)
    colors = scene_synth.class_colors(3)

    assert image.shape == (640, 640, 3)
    assert image.min() >= 0.0 and image.max() <= 1.0
    np.testing.assert_allclose(image[350, 280], colors[2])

    paths = scene_synth.write_rasters([scene], str(tmp_path))
    assert paths == [os.path.join(str(tmp_path), 'center.png')]
    assert os.path.exists(paths[0])

    return
