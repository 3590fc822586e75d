"""
.. module:: eval_metrics
    :platform: Unix, Mac, Windows
    :synopsis: COCO-style AP/mAP and pooled precision, recall and F1.

Detections and ground truth are given per image, as aligned lists. A
detection is anything with ``box``, ``class_id`` and ``confidence``
attributes (:class:`royolo.head_decode.Detection`); a truth anything with
``box`` and ``class_id`` (:class:`royolo.target_assign.Target` or a scene
object).
"""
import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from astropy.table import Table

from royolo import geometry
from royolo.mask_raster import MaskCache, MaskConfig

logger = logging.getLogger(__name__)

OVERLAP_BACKENDS = ('exact', 'masked', 'horizontal')
DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_CONF_SWEEP = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class EvalConfig:
    """
    Attributes
    ----------
    iou_thresholds : tuple of float
        Strictly increasing, in (0, 1]. Default 0.50, 0.55, ..., 0.95.
    backend : {'exact', 'masked', 'horizontal'}
        Overlap measure used for matching.
    conf_sweep : tuple of float
        Confidence thresholds of the precision/recall/F1 grid.
    recall_points : int
        Interpolation points of the AP integral (101, COCO).
    agnostic_matching : bool
        Match detections to truths of any class.
    mask : MaskConfig
        Raster settings for the masked backend.
    """
    iou_thresholds: tuple = DEFAULT_IOU_THRESHOLDS
    backend: str = 'exact'
    conf_sweep: tuple = DEFAULT_CONF_SWEEP
    recall_points: int = 101
    agnostic_matching: bool = False
    mask: MaskConfig = field(default_factory=MaskConfig)

    def __post_init__(self):
        thresholds = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, 'iou_thresholds', thresholds)
        object.__setattr__(self, 'conf_sweep', tuple(float(c) for c in self.conf_sweep))

        if len(thresholds) == 0:
            raise ValueError('EvalConfig needs at least one IoU threshold.')
        if any(t <= 0 or t > 1 for t in thresholds):
            raise ValueError('IoU thresholds must lie in (0, 1], got {0}.'.format(thresholds))
        if any(b <= a for a, b in zip(thresholds[:-1], thresholds[1:])):
            raise ValueError('IoU thresholds must be strictly increasing, got {0}.'.format(thresholds))
        if any(c < 0 or c > 1 for c in self.conf_sweep):
            raise ValueError('Confidence sweep values must lie in [0, 1].')
        if self.backend not in OVERLAP_BACKENDS:
            msg = 'EvalConfig.backend must be one of {0}, got {1!r}.'
            raise ValueError(msg.format(OVERLAP_BACKENDS, self.backend))
        if self.recall_points < 2:
            raise ValueError('EvalConfig.recall_points must be at least 2.')


class MatchResult(NamedTuple):
    """
    Attributes
    ----------
    pairs : list of tuple
        (detection index, truth index) of each true positive.
    tp : numpy.ndarray
        Boolean flag per detection, in input order.
    unmatched_dets : list of int
    unmatched_truths : list of int
    """
    pairs: list
    tp: np.ndarray
    unmatched_dets: list
    unmatched_truths: list


class PRF1(NamedTuple):
    """Means over the (confidence, IoU) grid plus the grid itself."""
    precision: float
    recall: float
    f1: float
    grid_precision: np.ndarray
    grid_recall: np.ndarray
    grid_f1: np.ndarray


@dataclass
class EvalReport:
    """
    Attributes
    ----------
    iou_thresholds : tuple of float
    ap : dict
        Class id to an array of AP values, one per IoU threshold. Only
        classes with ground truth appear.
    ap_per_threshold : numpy.ndarray
        Class mean AP at each threshold.
    map : float
        Mean of ``ap_per_threshold``.
    ap50, ap75, ap95 : float or None
        Class mean AP at 0.5, 0.75 and 0.95 when those thresholds are used.
    precision, recall, f1 : float
        Pooled over classes, averaged over the (confidence, IoU) grid.
    pr_curves : dict
        Class id to (confidence, precision, recall) arrays at the first
        IoU threshold.
    """
    iou_thresholds: tuple = DEFAULT_IOU_THRESHOLDS
    ap: dict = field(default_factory=dict)
    ap_per_threshold: np.ndarray = None
    map: float = 0.0
    ap50: float = None
    ap75: float = None
    ap95: float = None
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    pr_curves: dict = field(default_factory=dict)
    n_images: int = 0
    n_detections: int = 0
    n_truths: int = 0

    def to_dict(self):
        """JSON-serialisable summary (PR curves are written separately)."""
        per_threshold = [] if self.ap_per_threshold is None else self.ap_per_threshold
        return {
            'iou_thresholds': list(self.iou_thresholds),
            'ap': {str(c): [float(v) for v in vals] for c, vals in sorted(self.ap.items())},
            'ap_per_threshold': [float(v) for v in per_threshold],
            'mAP': float(self.map),
            'AP_50': self.ap50,
            'AP_75': self.ap75,
            'AP_95': self.ap95,
            'precision': float(self.precision),
            'recall': float(self.recall),
            'f1': float(self.f1),
            'n_images': self.n_images,
            'n_detections': self.n_detections,
            'n_truths': self.n_truths,
        }


def overlap_matrix(det_boxes, truth_boxes, backend='exact', mask_cfg=None):
    """
    Pairwise overlap between detection boxes and truth boxes.

    Returns
    -------
    ious : numpy.ndarray
        Shape (len(det_boxes), len(truth_boxes)).
    """
    n_d, n_t = len(det_boxes), len(truth_boxes)
    if n_d == 0 or n_t == 0:
        return np.zeros((n_d, n_t))

    if backend == 'horizontal':
        a = [[b.x, b.y, b.w, b.h] for b in det_boxes]
        b = [[t.x, t.y, t.w, t.h] for t in truth_boxes]
        return geometry.iou_matrix_horizontal(a, b)

    ious = np.zeros((n_d, n_t))
    if backend == 'exact':
        for i, d in enumerate(det_boxes):
            for j, t in enumerate(truth_boxes):
                ious[i, j] = geometry.iou_exact(d, t)
    elif backend == 'masked':
        cache = MaskCache(list(det_boxes) + list(truth_boxes), mask_cfg or MaskConfig())
        for i in range(n_d):
            for j in range(n_t):
                ious[i, j] = cache.iou(i, n_d + j)
    else:
        raise ValueError('Unknown overlap backend {0!r}.'.format(backend))
    return ious


def _confidence_order(dets):
    conf = np.array([d.confidence for d in dets], dtype=float)
    return np.argsort(-conf, kind='stable')


def _greedy_match(order, det_classes, truth_classes, ious, iou_t, agnostic):
    n_d, n_t = ious.shape
    tp = np.zeros(n_d, dtype=bool)
    taken = np.zeros(n_t, dtype=bool)
    pairs = []

    for i in order:
        eligible = (~taken) & (ious[i] >= iou_t)
        if not agnostic:
            eligible &= truth_classes == det_classes[i]
        if not eligible.any():
            continue
        # first maximum wins ties
        j = int(np.argmax(np.where(eligible, ious[i], -1.0)))
        taken[j] = True
        tp[i] = True
        pairs.append((int(i), j))

    return MatchResult(pairs, tp,
                       [i for i in range(n_d) if not tp[i]],
                       [j for j in range(n_t) if not taken[j]])


def match_detections(dets, truths, iou_t, backend='exact', mask_cfg=None,
                     agnostic=False, ious=None):
    """
    Greedy one-to-one matching of the detections of one image.

    Detections are visited by descending confidence (stable for ties). Each
    takes the unmatched truth of its class with the highest overlap, provided
    that overlap is at least ``iou_t``; otherwise it is a false positive.

    Parameters
    ----------
    dets : list
        Detections of one image.
    truths : list
        Ground truth of the same image.
    iou_t : float
    backend : {'exact', 'masked', 'horizontal'}
    mask_cfg : MaskConfig, optional
    agnostic : bool
        Ignore classes when matching.
    ious : numpy.ndarray, optional
        Precomputed :func:`overlap_matrix`.

    Returns
    -------
    result : MatchResult
    """
    if ious is None:
        ious = overlap_matrix([d.box for d in dets], [t.box for t in truths],
                              backend, mask_cfg)
    det_classes = np.array([d.class_id for d in dets], dtype=int)
    truth_classes = np.array([t.class_id for t in truths], dtype=int)
    return _greedy_match(_confidence_order(dets), det_classes, truth_classes,
                         ious, iou_t, agnostic)


def pr_curve(scores, tp, n_truths):
    """
    Cumulative precision and recall down a confidence-ranked list.

    Returns
    -------
    scores, precision, recall : numpy.ndarray
        Sorted by descending score.
    """
    scores = np.asarray(scores, dtype=float)
    tp = np.asarray(tp, dtype=bool)
    order = np.argsort(-scores, kind='stable')
    scores = scores[order]
    tp = tp[order]

    acc_tp = np.cumsum(tp)
    acc_fp = np.cumsum(~tp)
    precision = acc_tp / np.maximum(acc_tp + acc_fp, 1)
    recall = acc_tp / n_truths if n_truths > 0 else np.zeros_like(precision, dtype=float)
    return scores, precision, recall


def average_precision(scores, tp, n_truths, recall_points=101):
    """
    Area under the interpolated precision-recall curve.

    Precision is replaced by its running maximum from the right (the
    monotone envelope) and sampled at ``recall_points`` evenly spaced recall
    levels in [0, 1]; levels beyond the highest recall reached count as 0.

    Parameters
    ----------
    scores : array_like
        Confidence of every detection of the class across the dataset.
    tp : array_like
        True-positive flag per detection.
    n_truths : int
        Ground-truth count of the class.
    recall_points : int

    Returns
    -------
    ap : float or None
        None when the class has no ground truth.
    """
    if n_truths <= 0:
        return None
    if len(scores) == 0:
        return 0.0

    _, precision, recall = pr_curve(scores, tp, n_truths)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    levels = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, levels, side='left')
    sampled = np.zeros(recall_points)
    inside = idx < len(recall)
    sampled[inside] = envelope[idx[inside]]
    return float(np.mean(sampled))


def _image_overlaps(dets_by_image, truths_by_image, cfg):
    return [overlap_matrix([d.box for d in dets], [t.box for t in truths],
                           cfg.backend, cfg.mask)
            for dets, truths in zip(dets_by_image, truths_by_image)]


def _check_aligned(dets_by_image, truths_by_image):
    if len(dets_by_image) != len(truths_by_image):
        msg = 'Got detections for {0:d} images and ground truth for {1:d}.'
        raise ValueError(msg.format(len(dets_by_image), len(truths_by_image)))


def prf1(dets_by_image, truths_by_image, conf_sweep=DEFAULT_CONF_SWEEP,
         iou_thresholds=DEFAULT_IOU_THRESHOLDS, backend='exact', mask_cfg=None,
         agnostic=False, overlaps=None):
    """
    Pooled precision, recall and F1 over a grid of confidence and IoU
    thresholds.

    At every (confidence, IoU) cell the detections at or above the
    confidence are matched image by image; true positives, detections and
    truths are then summed over all classes and images into one P, R and
    F1 = 2PR / (P + R). The reported values are the means over all cells.
    A cell with no detections has precision 0; F1 is 0 when P + R = 0.

    Returns
    -------
    result : PRF1
    """
    _check_aligned(dets_by_image, truths_by_image)
    if overlaps is None:
        cfg = EvalConfig(backend=backend, mask=mask_cfg or MaskConfig())
        overlaps = _image_overlaps(dets_by_image, truths_by_image, cfg)

    n_truths = sum(len(t) for t in truths_by_image)
    conf_sweep = tuple(conf_sweep)
    iou_thresholds = tuple(iou_thresholds)
    grid_p = np.zeros((len(conf_sweep), len(iou_thresholds)))
    grid_r = np.zeros_like(grid_p)

    prepared = []
    for dets, truths, ious in zip(dets_by_image, truths_by_image, overlaps):
        prepared.append((np.array([d.confidence for d in dets], dtype=float),
                         np.array([d.class_id for d in dets], dtype=int),
                         np.array([t.class_id for t in truths], dtype=int),
                         _confidence_order(dets), ious))

    for ci, conf in enumerate(conf_sweep):
        for ti, iou_t in enumerate(iou_thresholds):
            n_tp = 0
            n_det = 0
            for conf_arr, det_cls, truth_cls, order, ious in prepared:
                keep = order[conf_arr[order] >= conf]
                n_det += len(keep)
                if len(keep) == 0:
                    continue
                match = _greedy_match(keep, det_cls, truth_cls, ious, iou_t, agnostic)
                n_tp += len(match.pairs)
            grid_p[ci, ti] = n_tp / n_det if n_det > 0 else 0.0
            grid_r[ci, ti] = n_tp / n_truths if n_truths > 0 else 0.0

    denom = grid_p + grid_r
    grid_f1 = np.where(denom > 0, 2 * grid_p * grid_r / np.where(denom > 0, denom, 1.0), 0.0)

    return PRF1(float(grid_p.mean()), float(grid_r.mean()), float(grid_f1.mean()),
                grid_p, grid_r, grid_f1)


def _threshold_value(thresholds, per_threshold, target):
    for t, v in zip(thresholds, per_threshold):
        if np.isclose(t, target):
            return float(v)
    return None


def evaluate(dets_by_image, truths_by_image, cfg=None):
    """
    Full evaluation of a detection set against ground truth.

    Parameters
    ----------
    dets_by_image : list of list
        Detections per image.
    truths_by_image : list of list
        Ground truth per image, aligned with ``dets_by_image``.
    cfg : EvalConfig, optional

    Returns
    -------
    report : EvalReport
    """
    if cfg is None:
        cfg = EvalConfig()
    _check_aligned(dets_by_image, truths_by_image)

    overlaps = _image_overlaps(dets_by_image, truths_by_image, cfg)

    truth_counts = {}
    for truths in truths_by_image:
        for t in truths:
            truth_counts[int(t.class_id)] = truth_counts.get(int(t.class_id), 0) + 1
    det_classes = {int(d.class_id) for dets in dets_by_image for d in dets}
    for c in sorted(det_classes - set(truth_counts)):
        logger.warning('Class %d has detections but no ground truth; excluded from AP.', c)

    ap = {c: np.zeros(len(cfg.iou_thresholds)) for c in sorted(truth_counts)}
    pr_curves = {}

    for ti, iou_t in enumerate(cfg.iou_thresholds):
        scores = {c: [] for c in truth_counts}
        flags = {c: [] for c in truth_counts}
        for dets, truths, ious in zip(dets_by_image, truths_by_image, overlaps):
            match = match_detections(dets, truths, iou_t, ious=ious,
                                     agnostic=cfg.agnostic_matching)
            for d, is_tp in zip(dets, match.tp):
                c = int(d.class_id)
                if c in scores:
                    scores[c].append(d.confidence)
                    flags[c].append(bool(is_tp))

        for c in truth_counts:
            ap[c][ti] = average_precision(scores[c], flags[c], truth_counts[c],
                                          cfg.recall_points)
            if ti == 0:
                pr_curves[c] = pr_curve(scores[c], flags[c], truth_counts[c])

    if ap:
        ap_per_threshold = np.mean(np.vstack(list(ap.values())), axis=0)
        mean_ap = float(np.mean(ap_per_threshold))
    else:
        logger.warning('No ground truth in the evaluated set; mAP is 0.')
        ap_per_threshold = np.zeros(len(cfg.iou_thresholds))
        mean_ap = 0.0

    scores_prf = prf1(dets_by_image, truths_by_image, cfg.conf_sweep,
                      cfg.iou_thresholds, agnostic=cfg.agnostic_matching,
                      overlaps=overlaps)

    report = EvalReport(iou_thresholds=cfg.iou_thresholds,
                        ap=ap,
                        ap_per_threshold=ap_per_threshold,
                        map=mean_ap,
                        ap50=_threshold_value(cfg.iou_thresholds, ap_per_threshold, 0.5) if ap else None,
                        ap75=_threshold_value(cfg.iou_thresholds, ap_per_threshold, 0.75) if ap else None,
                        ap95=_threshold_value(cfg.iou_thresholds, ap_per_threshold, 0.95) if ap else None,
                        precision=scores_prf.precision,
                        recall=scores_prf.recall,
                        f1=scores_prf.f1,
                        pr_curves=pr_curves,
                        n_images=len(truths_by_image),
                        n_detections=sum(len(d) for d in dets_by_image),
                        n_truths=sum(truth_counts.values()))
    logger.info('mAP %.4f, P %.4f, R %.4f, F1 %.4f over %d images.',
                report.map, report.precision, report.recall, report.f1, report.n_images)
    return report


def write_pr_curves(report, out_dir, prefix='pr_class'):
    """
    Write one comma-delimited ECSV file per class with the ranked
    confidence, precision and recall at the first IoU threshold.

    Returns
    -------
    paths : list of str
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for c, (scores, precision, recall) in sorted(report.pr_curves.items()):
        tab = Table([scores, precision, recall], names=('confidence', 'precision', 'recall'))
        tab.meta['class_id'] = int(c)
        tab.meta['iou_threshold'] = float(report.iou_thresholds[0])
        path = os.path.join(out_dir, '{0:s}{1:d}.csv'.format(prefix, int(c)))
        tab.write(path, format='ascii.ecsv', delimiter=',', overwrite=True)
        paths.append(path)
    return paths
