"""
Training target assignment.

For every ground-truth box, every scale and every anchor whose size is
within a factor of 4 of the box (the ratio gate), the host grid cell and its
two nearest neighbours each receive one assignment row carrying the same
target label. Neighbours are picked by the fractional position of the box
center inside the host cell: left when fx <= 0.5, otherwise right; up when
fy <= 0.5, otherwise down. Neighbours outside the grid are dropped.
"""
import logging
from typing import NamedTuple

import numpy as np

from royolo import angle_codec
from royolo.geometry import RotatedBox
from royolo.head_decode import anchor_ratio, host_cell

logger = logging.getLogger(__name__)

RATIO_LIMIT = 4.0


class Target(NamedTuple):
    box: RotatedBox
    class_id: int


class Assignment(NamedTuple):
    """
    One loss row: a (scale, image, anchor, cell) made responsible for a target.
    """
    scale: int
    batch: int
    anchor: int
    row: int
    col: int
    target: int
    box: RotatedBox
    class_id: int
    angle_bin: int


class AssignmentResult(NamedTuple):
    """
    Attributes
    ----------
    entries : list of Assignment
        Ordered by (image, target, scale, anchor, cell).
    objectness : list of numpy.ndarray
        Per scale, the dense target T of shape (N_B, N_A, N_Gh, N_Gw).
        All zeros here; filled from the box loss by the loss suite.
    """
    entries: list
    objectness: list

    def at_scale(self, scale):
        return [e for e in self.entries if e.scale == scale]

    def __len__(self):
        return len(self.entries)


def ratio_gate(box, anchor):
    """
    True when the box and the anchor are within a factor of 4 on both edges.

    The boundary is excluded: a ratio of exactly 4 is rejected. Rotated boxes
    are gated on their own (w, h), not on their horizontal envelope.
    """
    if box.w <= 0 or box.h <= 0 or anchor[0] <= 0 or anchor[1] <= 0:
        raise ValueError('Box and anchor sizes must be positive.')
    return anchor_ratio(box.w, box.h, anchor) < RATIO_LIMIT


def neighbor_cells(gx, gy, grid_shape):
    """
    Host cell plus the two neighbours nearest the center.

    Parameters
    ----------
    gx, gy : float
        Box center in grid units (pixels / stride).
    grid_shape : tuple
        (N_Gh, N_Gw).

    Returns
    -------
    cells : list of tuple
        (row, col) pairs: host first, then the horizontal and the vertical
        neighbour, with out-of-grid cells removed.
    """
    n_gh, n_gw = grid_shape
    k, l = host_cell(gx, gy, 1.0, grid_shape)
    fx = gx - l
    fy = gy - k

    cells = [(k, l)]
    cells.append((k, l - 1) if fx <= 0.5 else (k, l + 1))
    cells.append((k - 1, l) if fy <= 0.5 else (k + 1, l))

    return [(r, c) for r, c in cells if 0 <= r < n_gh and 0 <= c < n_gw]


def build_targets(ts, cfg):
    """
    Assign ground truth to scales, anchors and grid cells.

    Parameters
    ----------
    ts : list of list
        TargetSet: per image, (RotatedBox, class_id) pairs with canonical
        boxes and 0 <= class_id < N_C.
    cfg : HeadConfig

    Returns
    -------
    result : AssignmentResult
    """
    n_b = len(ts)
    entries = []
    for b, image_targets in enumerate(ts):
        for t_idx, (box, class_id) in enumerate(image_targets):
            if not (box.w > 0 and box.h > 0):
                msg = 'Target {0:d} of image {1:d} has zero area: {2}.'
                raise ValueError(msg.format(t_idx, b, tuple(box)))
            if not (0 <= class_id < cfg.n_classes):
                msg = 'Target class {0} is outside [0, {1:d}).'
                raise ValueError(msg.format(class_id, cfg.n_classes))

            angle_bin = (angle_codec.encode_angle(box.theta, cfg.angle_granularity)
                         if cfg.rotated else 0)

            for scale, stride in enumerate(cfg.strides):
                grid = cfg.grid_shape(scale)
                cells = neighbor_cells(box.x / stride, box.y / stride, grid)
                for j, anchor in enumerate(cfg.anchors[scale]):
                    if not ratio_gate(box, anchor):
                        continue
                    for k, l in cells:
                        entries.append(Assignment(scale, b, j, k, l, t_idx, box,
                                                  int(class_id), angle_bin))

    objectness = [np.zeros(cfg.tensor_shape(s, n_b=n_b)[:4]) for s in range(cfg.n_scales)]
    logger.debug('Assigned %d rows for %d targets.', len(entries),
                 sum(len(t) for t in ts))

    return AssignmentResult(entries, objectness)


def targets_from_scenes(scenes):
    """TargetSet (list of per-image Target lists) from labeled scenes."""
    return [[Target(obj.box, obj.class_id) for obj in scene.objects] for scene in scenes]
