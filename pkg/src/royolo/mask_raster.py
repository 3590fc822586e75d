"""
.. module:: mask_raster
    :platform: Unix, Mac, Windows
    :synopsis: Rotated IoU from 0-1 occupancy masks.

A rotated box is rasterized into an h_m x w_m grid of cells. A cell is set
when its center lies inside the box. Box coordinates are mapped from image
space into mask space by (w_m / image_w, h_m / image_h), so the mask size can
differ from the image size.

Masks are stored as packed bit rows (numpy.packbits along the column axis);
intersections are a bitwise AND followed by a byte popcount.

Two union rules are supported:

    corrected      IoU = I / (A + B - I)
    paper_literal  IoU = I / (A + B)

The literal rule scores identical boxes 0.5 and relates to the corrected one
by IoU_lit = IoU_cor / (1 + IoU_cor).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from royolo import geometry

logger = logging.getLogger(__name__)

UNION_MODES = ('corrected', 'paper_literal')

# Popcount of every byte value.
_BYTE_POPCOUNT = np.array([bin(i).count('1') for i in range(256)], dtype=np.uint32)


@dataclass(frozen=True)
class MaskConfig:
    """
    Mask geometry and union rule.

    Attributes
    ----------
    h_m, w_m : int
        Mask rows and columns (default 550 x 550).
    image_w, image_h : int
        Source image size in pixels (default 640 x 640).
    union_mode : {'corrected', 'paper_literal'}
    """
    h_m: int = 550
    w_m: int = 550
    image_w: int = 640
    image_h: int = 640
    union_mode: str = 'corrected'

    def __post_init__(self):
        for name in ('h_m', 'w_m', 'image_w', 'image_h'):
            if getattr(self, name) <= 0:
                msg = 'MaskConfig.{0:s} must be positive, got {1}.'
                raise ValueError(msg.format(name, getattr(self, name)))
        if self.union_mode not in UNION_MODES:
            msg = 'MaskConfig.union_mode must be one of {0}, got {1!r}.'
            raise ValueError(msg.format(UNION_MODES, self.union_mode))

    @property
    def scale_x(self):
        return self.w_m / self.image_w

    @property
    def scale_y(self):
        return self.h_m / self.image_h

    def with_size(self, size):
        """Copy with a square mask of ``size`` cells."""
        return MaskConfig(h_m=size, w_m=size, image_w=self.image_w,
                          image_h=self.image_h, union_mode=self.union_mode)


class Mask:
    """
    Packed 0-1 occupancy grid.

    Attributes
    ----------
    bits : numpy.ndarray
        uint8 array of shape (h_m, ceil(w_m / 8)).
    h_m, w_m : int
    count : int
        Number of set cells.
    """
    __slots__ = ('bits', 'h_m', 'w_m', 'count')

    def __init__(self, bits, h_m, w_m):
        self.bits = bits
        self.h_m = h_m
        self.w_m = w_m
        self.count = int(_BYTE_POPCOUNT[bits].sum())

    @classmethod
    def from_array(cls, data):
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError('Mask data must be a non-empty 2-D array.')
        bits = np.packbits(data.astype(bool), axis=1)
        return cls(bits, data.shape[0], data.shape[1])

    @property
    def data(self):
        """Unpacked 0/1 uint8 array of shape (h_m, w_m)."""
        return np.unpackbits(self.bits, axis=1, count=self.w_m)

    def __len__(self):
        return self.count

    def __repr__(self):
        return 'Mask({0:d}x{1:d}, count={2:d})'.format(self.h_m, self.w_m, self.count)


def _edge_lines(p_start, p_end, p_other):
    """
    Slope and the two intercepts of a pair of parallel edges.

    The first line runs through p_start and p_end, the second is its parallel
    through p_other. Returns None for vertical edges.
    """
    dx = p_end[0] - p_start[0]
    dy = p_end[1] - p_start[1]
    if abs(dx) < 1e-12:
        return None
    slope = dy / dx
    b0 = p_start[1] - slope * p_start[0]
    b1 = p_other[1] - slope * p_other[0]
    return slope, b0, b1


def _between(values, lo, hi):
    # Half-open so that abutting boxes never share a cell.
    return (values >= lo) & (values < hi)


def get_mask(box, cfg):
    """
    Rasterize a rotated box into a 0-1 mask.

    theta == 0 boxes fill the axis-aligned cell rectangle directly. Otherwise
    the box, scaled into mask space, is bounded by two pairs of parallel
    lines y = a_0 x + b_00, y = a_0 x + b_01 and y = a_1 x + b_10,
    y = a_1 x + b_11; a cell is set when its center lies between both pairs.
    Vertical edges are handled as direct column bounds. Cells outside the mask
    are clipped.

    Parameters
    ----------
    box : RotatedBox
    cfg : MaskConfig

    Returns
    -------
    mask : Mask
        All-zero when the box lies outside the image.
    """
    data = np.zeros((cfg.h_m, cfg.w_m), dtype=bool)
    sx = cfg.scale_x
    sy = cfg.scale_y

    if box.theta == 0:
        x0 = (box.x - box.w / 2) * sx
        x1 = (box.x + box.w / 2) * sx
        y0 = (box.y - box.h / 2) * sy
        y1 = (box.y + box.h / 2) * sy

        # Cells whose centers (c + 0.5) fall in [lo, hi).
        c0 = max(int(math.ceil(x0 - 0.5)), 0)
        c1 = min(int(math.ceil(x1 - 0.5)), cfg.w_m)
        r0 = max(int(math.ceil(y0 - 0.5)), 0)
        r1 = min(int(math.ceil(y1 - 0.5)), cfg.h_m)
        if c1 > c0 and r1 > r0:
            data[r0:r1, c0:c1] = True
    else:
        quad = geometry.corners(box)
        quad[:, 0] *= sx
        quad[:, 1] *= sy

        c0 = max(int(math.floor(quad[:, 0].min())), 0)
        c1 = min(int(math.ceil(quad[:, 0].max())) + 1, cfg.w_m)
        r0 = max(int(math.floor(quad[:, 1].min())), 0)
        r1 = min(int(math.ceil(quad[:, 1].max())) + 1, cfg.h_m)

        if c1 > c0 and r1 > r0:
            jj = np.arange(c0, c1, dtype=float) + 0.5
            ii = np.arange(r0, r1, dtype=float) + 0.5
            cols, rows = np.meshgrid(jj, ii)

            inside = np.ones(cols.shape, dtype=bool)
            # Edge pairs: (p0->p1 with parallel through p3), (p0->p3 with parallel through p1)
            for p_start, p_end, p_other in ((quad[0], quad[1], quad[3]),
                                            (quad[0], quad[3], quad[1])):
                lines = _edge_lines(p_start, p_end, p_other)
                if lines is None:
                    lo = min(p_start[0], p_other[0])
                    hi = max(p_start[0], p_other[0])
                    inside &= _between(cols, lo, hi)
                else:
                    slope, b0, b1 = lines
                    line_y = slope * cols
                    inside &= _between(rows, line_y + min(b0, b1), line_y + max(b0, b1))

            data[r0:r1, c0:c1] = inside

    return Mask.from_array(data)


def intersection_count(mask_a, mask_b):
    if mask_a.bits.shape != mask_b.bits.shape:
        msg = 'Mask shapes differ: {0} vs {1}.'
        raise ValueError(msg.format((mask_a.h_m, mask_a.w_m), (mask_b.h_m, mask_b.w_m)))
    return int(_BYTE_POPCOUNT[np.bitwise_and(mask_a.bits, mask_b.bits)].sum())


def mask_iou(mask_a, mask_b, union_mode='corrected'):
    """
    IoU of two pre-built masks.

    Returns 0 when both masks are empty.
    """
    inter = intersection_count(mask_a, mask_b)
    if union_mode == 'corrected':
        union = mask_a.count + mask_b.count - inter
    elif union_mode == 'paper_literal':
        union = mask_a.count + mask_b.count
    else:
        raise ValueError('Unknown union mode {0!r}.'.format(union_mode))

    if union == 0:
        return 0.0
    return inter / union


def iou_ro(a, b, cfg):
    """
    Approximate rotated IoU from rasterized masks.

    Parameters
    ----------
    a, b : RotatedBox
    cfg : MaskConfig
        Mask size, image size and union rule.

    Returns
    -------
    iou : float
        In [0, 1] for the corrected union, [0, 0.5] for the literal one.
    """
    mask_a = get_mask(a, cfg)
    mask_b = get_mask(b, cfg)
    if mask_a.count == 0 and mask_b.count == 0:
        logger.debug('Both boxes rasterize to empty masks: %s, %s', a, b)
    return mask_iou(mask_a, mask_b, cfg.union_mode)


class MaskCache:
    """
    Per-call cache of one mask per box, keyed by list position.

    Built inside an NMS or benchmark run and discarded with it.
    """

    def __init__(self, boxes, cfg):
        self.boxes = boxes
        self.cfg = cfg
        self._masks = {}

    def __getitem__(self, idx):
        mask = self._masks.get(idx)
        if mask is None:
            mask = get_mask(self.boxes[idx], self.cfg)
            self._masks[idx] = mask
        return mask

    def iou(self, i, j):
        return mask_iou(self[i], self[j], self.cfg.union_mode)

    def __len__(self):
        return len(self._masks)
