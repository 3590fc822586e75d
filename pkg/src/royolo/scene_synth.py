"""
.. module:: scene_synth
    :platform: Unix, Mac, Windows
    :synopsis: Seeded synthetic scenes and label-space augmentation.

Objects are scattered over an empty canvas the way single-object photos are
mixed into training images. Each gets a random location, size and rotation and
may repeat the previous object's class; rasters put them on a noise background.
Every image draws from its own generator seeded by (seed, image index), so
images can be produced independently and in any order.
"""
import logging
import math
import os
from dataclasses import dataclass

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
from joblib import Parallel, delayed

from royolo import angle_codec, geometry
from royolo.data import LabeledScene, SceneObject
from royolo.mask_raster import MaskConfig, get_mask

logger = logging.getLogger(__name__)

# Nominal (w, h) in pixels per class, roughly pill boxes, vials and blister
# packs seen from above on a 640 px tray image.
DEFAULT_CLASS_SIZES = ((60.0, 120.0), (80.0, 80.0), (48.0, 144.0),
                       (100.0, 60.0), (40.0, 90.0), (120.0, 110.0))

AUGMENT_OPS = ('rotate', 'hflip', 'vflip', 'shrink', 'translate', 'perspective')
BORDER_POLICIES = ('drop', 'clip')


@dataclass(frozen=True)
class SceneSpec:
    """
    Attributes
    ----------
    image_w, image_h : int
        Canvas size (640 x 640).
    n_objects : tuple of int
        Inclusive (min, max) object count per image.
    class_sizes : tuple
        Per class, the nominal (w, h) in pixels. Its length sets N_C.
    size_jitter : float
        Random resize: each object is scaled by a factor drawn uniformly
        from [1 - size_jitter, 1 + size_jitter].
    angle_range : tuple of float
        Uniform angle distribution, degrees within [0, 90).
    angle_granularity : int
        When positive, generated angles snap to the centers of this many
        angle bins.
    overlap_cap : float
        Maximum exact IoU between any two objects of one image.
    repeat_prob : float
        Probability that an object repeats the previous object's class.
    max_retries : int
        Placement attempts per object before giving up.
    seed : int
    id_prefix : str
    """
    image_w: int = 640
    image_h: int = 640
    n_objects: tuple = (1, 8)
    class_sizes: tuple = DEFAULT_CLASS_SIZES
    size_jitter: float = 0.2
    angle_range: tuple = (0.0, 90.0)
    angle_granularity: int = 0
    overlap_cap: float = 0.1
    repeat_prob: float = 0.3
    max_retries: int = 500
    seed: int = 0
    id_prefix: str = 'scene'

    def __post_init__(self):
        object.__setattr__(self, 'n_objects', tuple(int(n) for n in self.n_objects))
        object.__setattr__(self, 'class_sizes', tuple((float(s[0]), float(s[1])) for s in self.class_sizes))
        object.__setattr__(self, 'angle_range', tuple(float(a) for a in self.angle_range))

        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError('Scene size must be positive, got {0}x{1}.'.format(self.image_w, self.image_h))
        if len(self.n_objects) != 2 or self.n_objects[0] < 0 or self.n_objects[1] < self.n_objects[0]:
            raise ValueError('n_objects must be (min, max) with 0 <= min <= max, got {0}.'.format(self.n_objects))
        if len(self.class_sizes) == 0 or any(w <= 0 or h <= 0 for w, h in self.class_sizes):
            raise ValueError('class_sizes must hold positive (w, h) pairs.')
        if not (0.0 <= self.size_jitter < 1.0):
            raise ValueError('size_jitter must be in [0, 1), got {0}.'.format(self.size_jitter))
        lo, hi = self.angle_range
        if not (0.0 <= lo <= hi <= 90.0):
            raise ValueError('angle_range must satisfy 0 <= lo <= hi <= 90, got {0}.'.format(self.angle_range))
        if self.angle_granularity < 0:
            raise ValueError('angle_granularity must be non-negative.')
        if not (0.0 <= self.overlap_cap <= 1.0):
            raise ValueError('overlap_cap must be in [0, 1], got {0}.'.format(self.overlap_cap))
        if not (0.0 <= self.repeat_prob <= 1.0):
            raise ValueError('repeat_prob must be in [0, 1], got {0}.'.format(self.repeat_prob))
        if self.max_retries < 1:
            raise ValueError('max_retries must be at least 1.')

    @property
    def n_classes(self):
        return len(self.class_sizes)


def half_extents(box):
    """Half width and half height of the axis-aligned envelope of a box."""
    rad = math.radians(box.theta)
    c, s = abs(math.cos(rad)), abs(math.sin(rad))
    return (box.w * c + box.h * s) / 2, (box.w * s + box.h * c) / 2


def _draw_angle(rng, spec):
    lo, hi = spec.angle_range
    theta = rng.uniform(lo, hi) if hi > lo else lo
    theta = min(theta, math.nextafter(90.0, 0.0))
    if spec.angle_granularity > 0:
        idx = angle_codec.encode_angle(theta, spec.angle_granularity)
        theta = angle_codec.bin_center(idx, spec.angle_granularity)
    return theta


def _place_object(rng, spec, class_id, placed):
    w0, h0 = spec.class_sizes[class_id]
    for _ in range(spec.max_retries):
        scale = rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter)
        theta = _draw_angle(rng, spec)
        box = geometry.canonicalize(0.0, 0.0, w0 * scale, h0 * scale, theta)
        ex, ey = half_extents(box)
        if 2 * ex > spec.image_w or 2 * ey > spec.image_h:
            continue
        x = rng.uniform(ex, spec.image_w - ex)
        y = rng.uniform(ey, spec.image_h - ey)
        box = box._replace(x=x, y=y)
        if all(geometry.iou_exact(box, other) <= spec.overlap_cap for other in placed):
            return box
    return None


def generate_scene(spec, index):
    """One scene; depends only on (spec.seed, index)."""
    rng = np.random.default_rng([spec.seed, index])
    n = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))

    objects = []
    placed = []
    prev_class = None
    for i in range(n):
        if prev_class is not None and rng.random() < spec.repeat_prob:
            class_id = prev_class
        else:
            class_id = int(rng.integers(spec.n_classes))

        box = _place_object(rng, spec, class_id, placed)
        if box is None:
            msg = 'Could not place object {0:d} of {1:d} in image {2:d} after {3:d} tries (overlap cap {4}).'
            raise RuntimeError(msg.format(i + 1, n, index, spec.max_retries, spec.overlap_cap))

        placed.append(box)
        objects.append(SceneObject(box, class_id))
        prev_class = class_id

    image_id = '{0:s}_{1:06d}'.format(spec.id_prefix, index)
    return LabeledScene(image_id, spec.image_w, spec.image_h, objects)


def generate(spec, n_images, n_jobs=1):
    """
    Generate labeled scenes.

    Parameters
    ----------
    spec : SceneSpec
    n_images : int
    n_jobs : int
        joblib workers; the output does not depend on it.

    Returns
    -------
    scenes : list of LabeledScene

    Raises
    ------
    RuntimeError
        When an object cannot be placed within ``spec.max_retries`` tries.
    """
    if n_images < 0:
        raise ValueError('n_images must be non-negative, got {0}.'.format(n_images))
    if n_images == 0:
        return []

    if n_jobs == 1:
        scenes = [generate_scene(spec, i) for i in range(n_images)]
    else:
        scenes = Parallel(n_jobs=n_jobs, prefer='threads')(
            delayed(generate_scene)(spec, i) for i in range(n_images))

    logger.info('Generated %d scenes with %d objects.', len(scenes),
                sum(len(s.objects) for s in scenes))
    return scenes


def image_polygon(width, height):
    return np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])


def visible_fraction(box, width, height):
    """Share of the box area that lies inside the image."""
    inside = geometry.polygon_area(geometry.clip_polygon(geometry.corners(box),
                                                         image_polygon(width, height)))
    return min(inside / (box.w * box.h), 1.0)


def _rotate_box(box, psi, cx, cy):
    rad = math.radians(psi)
    c, s = math.cos(rad), math.sin(rad)
    dx, dy = box.x - cx, box.y - cy
    return geometry.canonicalize(cx + c * dx - s * dy, cy + s * dx + c * dy,
                                 box.w, box.h, box.theta + psi)


def _perspective_box(box, matrix):
    quad = geometry.corners(box)
    homog = np.hstack([quad, np.ones((4, 1))]) @ np.asarray(matrix, dtype=float).T
    if np.any(np.abs(homog[:, 2]) < 1e-12):
        raise ValueError('Perspective matrix sends a box corner to infinity.')
    warped = homog[:, :2] / homog[:, 2:3]
    return geometry.min_area_rect(warped)


def transform_box(box, op, value, width, height):
    """Apply one augmentation op to a single box."""
    if op == 'rotate':
        return _rotate_box(box, float(value), width / 2.0, height / 2.0)
    if op == 'hflip':
        return geometry.canonicalize(width - box.x, box.y, box.w, box.h, -box.theta)
    if op == 'vflip':
        return geometry.canonicalize(box.x, height - box.y, box.w, box.h, -box.theta)
    if op == 'shrink':
        s = float(value)
        return geometry.canonicalize(box.x * s, box.y * s, box.w * s, box.h * s, box.theta)
    if op == 'translate':
        dx, dy = value
        return geometry.canonicalize(box.x + dx, box.y + dy, box.w, box.h, box.theta)
    if op == 'perspective':
        return _perspective_box(box, value)
    raise ValueError('Unknown augment op {0!r}; use one of {1}.'.format(op, AUGMENT_OPS))


def _inside_image(box, width, height, tol=1e-9):
    quad = geometry.corners(box)
    slack = tol * max(width, height)
    return bool(np.all(quad >= -slack) and np.all(quad[:, 0] <= width + slack)
                and np.all(quad[:, 1] <= height + slack))


def clip_box(box, width, height):
    """
    Rotated box covering the in-image part of ``box``.

    The minimum-area rectangle of the visible polygon is used when it fits in
    the image, otherwise its axis-aligned bounding box. None when nothing is
    visible.
    """
    visible = geometry.clip_polygon(geometry.corners(box), image_polygon(width, height))
    if geometry.polygon_area(visible) < geometry.AREA_EPS:
        return None
    visible = np.clip(np.asarray(visible), 0.0, [width, height])
    fitted = geometry.min_area_rect(visible)
    if _inside_image(fitted, width, height):
        return fitted
    lo, hi = visible.min(axis=0), visible.max(axis=0)
    return geometry.canonicalize((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2,
                                 hi[0] - lo[0], hi[1] - lo[1], 0.0)


def augment_labels(scene, op, value=None, min_visible=0.3, border='clip'):
    """
    Transform every box of a scene consistently.

    Parameters
    ----------
    scene : LabeledScene
    op : {'rotate', 'hflip', 'vflip', 'shrink', 'translate', 'perspective'}
    value : float, tuple or array_like
        Degrees for rotate (about the image center, clockwise positive),
        the single ratio s for shrink (x, y, w and h all scale by s about the
        origin), (dx, dy) for translate and a 3 x 3 homography for
        perspective. Unused by the flips.
    min_visible : float
        Boxes whose in-image area fraction falls below this are dropped.
    border : {'clip', 'drop'}
        What to do with the remaining boxes that cross the border: 'clip'
        replaces them with the rotated box of their visible part (see
        :func:`clip_box`), 'drop' removes them too.

    Returns
    -------
    scene : LabeledScene
        A new scene with the same id and size; the raster is not carried.
        Every box lies inside the image.
    """
    if border not in BORDER_POLICIES:
        raise ValueError('border must be one of {0}, got {1!r}.'.format(BORDER_POLICIES, border))
    if op == 'shrink' and not (value is not None and float(value) > 0):
        raise ValueError('shrink needs a positive ratio, got {0}.'.format(value))

    width, height = scene.width, scene.height
    objects = []
    for obj in scene.objects:
        box = transform_box(obj.box, op, value, width, height)
        frac = visible_fraction(box, width, height)
        if frac < min_visible:
            logger.warning('Dropping %s box of class %d in %s: %.2f visible.',
                           op, obj.class_id, scene.image_id, frac)
            continue
        if not _inside_image(box, width, height):
            if border == 'drop':
                logger.warning('Dropping %s box of class %d in %s: crosses the border.',
                               op, obj.class_id, scene.image_id)
                continue
            box = clip_box(box, width, height)
            if box is None:
                continue
        objects.append(SceneObject(box, obj.class_id))

    return LabeledScene(scene.image_id, width, height, objects)


def class_colors(n_classes, cmap='tab10'):
    """RGB colour per class from a matplotlib colormap."""
    colormap = matplotlib.colormaps[cmap]
    return np.array([colormap(i % colormap.N)[:3] for i in range(n_classes)])


def rasterize(scene, seed=0, noise_level=0.35, cmap='tab10'):
    """
    Flat-colour rendering of a scene on a uniform noise background.

    Each object is filled with its class colour using the same pixel-center
    rule as the IoU masks, at one mask cell per pixel.

    Returns
    -------
    image : numpy.ndarray
        (height, width, 3) floats in [0, 1].
    """
    rng = np.random.default_rng([seed, 1])
    image = rng.random((scene.height, scene.width, 3)) * noise_level

    n_classes = max([obj.class_id for obj in scene.objects], default=0) + 1
    colors = class_colors(n_classes, cmap)
    cfg = MaskConfig(h_m=scene.height, w_m=scene.width,
                     image_w=scene.width, image_h=scene.height)
    for obj in scene.objects:
        fill = get_mask(obj.box, cfg).data.astype(bool)
        image[fill] = colors[obj.class_id]
    return image


def write_rasters(scenes, out_dir, seed=0):
    """
    Write one PNG per scene, named after its image id.

    Returns
    -------
    paths : list of str
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, scene in enumerate(scenes):
        image = scene.raster if scene.raster is not None else rasterize(scene, seed=seed + i)
        path = os.path.join(out_dir, scene.image_id + '.png')
        plt.imsave(path, image)
        paths.append(path)
    return paths
