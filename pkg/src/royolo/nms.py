"""
Confidence filtering and greedy non-maximum suppression.

Horizontal mode measures overlap with the axis-aligned IoU of (x, y, w, h).
Rotated mode uses the mask IoU (one cached mask per detection for the
duration of the call) or, optionally, the exact polygon IoU.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from royolo import geometry
from royolo.mask_raster import MaskCache, MaskConfig

logger = logging.getLogger(__name__)

NMS_MODES = ('horizontal', 'rotated')
ROTATED_BACKENDS = ('masked', 'exact')
DEFAULT_IOU_THRESH = {'horizontal': 0.45, 'rotated': 0.25}


@dataclass(frozen=True)
class NmsConfig:
    """
    Attributes
    ----------
    conf_thresh : float
        Pre-NMS confidence gate (0.45).
    iou_thresh : float or None
        Suppression threshold; None picks 0.45 (horizontal) or 0.25 (rotated).
    mode : {'horizontal', 'rotated'}
    class_aware : bool
        When True only same-class detections suppress each other.
    rotated_backend : {'masked', 'exact'}
    mask : MaskConfig
    max_det : int or None
        Cap on kept detections.
    """
    conf_thresh: float = 0.45
    iou_thresh: float = None
    mode: str = 'rotated'
    class_aware: bool = True
    rotated_backend: str = 'masked'
    mask: MaskConfig = field(default_factory=MaskConfig)
    max_det: int = None

    def __post_init__(self):
        if self.mode not in NMS_MODES:
            raise ValueError('NmsConfig.mode must be one of {0}, got {1!r}.'.format(NMS_MODES, self.mode))
        if self.rotated_backend not in ROTATED_BACKENDS:
            msg = 'NmsConfig.rotated_backend must be one of {0}, got {1!r}.'
            raise ValueError(msg.format(ROTATED_BACKENDS, self.rotated_backend))
        if self.iou_thresh is None:
            object.__setattr__(self, 'iou_thresh', DEFAULT_IOU_THRESH[self.mode])
        for name in ('conf_thresh', 'iou_thresh'):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                msg = 'NmsConfig.{0:s} must be in [0, 1], got {1}.'
                raise ValueError(msg.format(name, val))
        if self.max_det is not None and self.max_det < 1:
            raise ValueError('NmsConfig.max_det must be positive or None.')


def filter_conf(dets, conf_thresh):
    """Detections with confidence >= conf_thresh, in input order."""
    return [d for d in dets if d.confidence >= conf_thresh]


def sort_detections(dets):
    """
    Order by confidence descending; ties by provenance (scale, anchor, row,
    column), then by input position.
    """
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].confidence, dets[i].provenance, i))
    return [dets[i] for i in order]


def overlap_function(boxes, cfg):
    """
    Pairwise overlap callable ``f(i, j)`` over a list of boxes for the
    configured mode and backend.
    """
    if cfg.mode == 'horizontal':
        return lambda i, j: geometry.iou_horizontal(boxes[i], boxes[j])
    if cfg.rotated_backend == 'exact':
        return lambda i, j: geometry.iou_exact(boxes[i], boxes[j])
    return MaskCache(boxes, cfg.mask).iou


def nms(dets, cfg=None):
    """
    Greedy hard non-maximum suppression.

    Detections are visited in confidence order; each surviving detection
    removes every later detection (of the same class when class-aware) whose
    overlap with it reaches ``cfg.iou_thresh``.

    Parameters
    ----------
    dets : list of Detection
    cfg : NmsConfig, optional

    Returns
    -------
    kept : list of Detection
        Sorted by confidence, descending.
    """
    if cfg is None:
        cfg = NmsConfig()
    ordered = sort_detections(dets)
    if not ordered:
        return []

    boxes = [d.box for d in ordered]
    overlap = overlap_function(boxes, cfg)
    classes = np.array([d.class_id for d in ordered])
    alive = np.ones(len(ordered), dtype=bool)

    kept = []
    for i in range(len(ordered)):
        if not alive[i]:
            continue
        kept.append(ordered[i])
        if cfg.max_det is not None and len(kept) >= cfg.max_det:
            break
        for j in range(i + 1, len(ordered)):
            if not alive[j]:
                continue
            if cfg.class_aware and classes[j] != classes[i]:
                continue
            if overlap(i, j) >= cfg.iou_thresh:
                alive[j] = False

    logger.debug('NMS kept %d of %d detections.', len(kept), len(ordered))
    return kept


def run_nms(dets, cfg=None):
    """filter_conf followed by nms, with the thresholds of one config."""
    if cfg is None:
        cfg = NmsConfig()
    return nms(filter_conf(dets, cfg.conf_thresh), cfg)
