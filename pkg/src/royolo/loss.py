"""
.. module:: loss
    :platform: Unix, Mac, Windows
    :synopsis: Forward values of the detector loss terms.

Per grid scale i the suite computes

    L_box(i)    mean of 1 - IoU(decoded box, target box) over assigned rows
    L_obj(i)    BCE between sigmoid(objectness) and T over every cell
    L_cls(i)    BCE between sigmoid(class logits) and one-hot classes,
                averaged over n_t x N_C entries
    L_theta(i)  the same over n_t x N_D angle-bin entries

and combines them as

    L = g_box * sum L_box(i) + g_obj * sum xi_i L_obj(i)
        + g_cls * sum L_cls(i) + g_theta * sum L_theta(i)

n_t is the number of assignment rows at the scale. T is zero on unassigned
cells and clamp(IoU, 0, 1) on assigned ones (the largest value when several
targets share a cell), so L_box must be evaluated before L_obj.

Terms with nothing to average (no assignment rows) are None and contribute 0
to the total. Nothing here computes gradients.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_expit

from royolo import geometry
from royolo.angle_codec import bin_center, smooth_angle_label
from royolo.head_decode import decode_xywh, check_tensors
from royolo.target_assign import build_targets

logger = logging.getLogger(__name__)

BOX_METRICS = ('iou', 'giou', 'diou', 'ciou')


@dataclass(frozen=True)
class LossWeights:
    """
    Balance weights; defaults are gamma = (0.05, 1, 0.5, 0.5) and
    xi = (4, 1, 0.4) for the 8/16/32 strides.

    ``angle_smoothing_radius`` > 0 replaces the one-hot angle target with a
    Gaussian window of that sigma (in bins).
    """
    gamma_box: float = 0.05
    gamma_obj: float = 1.0
    gamma_cls: float = 0.5
    gamma_theta: float = 0.5
    xi: tuple = (4.0, 1.0, 0.4)
    box_metric: str = 'ciou'
    angle_smoothing_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'xi', tuple(float(v) for v in self.xi))
        if not np.isfinite(self.angle_smoothing_radius) or self.angle_smoothing_radius < 0:
            msg = 'LossWeights.angle_smoothing_radius must be finite and non-negative, got {0}.'
            raise ValueError(msg.format(self.angle_smoothing_radius))
        for name in ('gamma_box', 'gamma_obj', 'gamma_cls', 'gamma_theta'):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                msg = 'LossWeights.{0:s} must be finite and non-negative, got {1}.'
                raise ValueError(msg.format(name, val))
        if any((not np.isfinite(v)) or v < 0 for v in self.xi):
            raise ValueError('LossWeights.xi must be finite and non-negative, got {0}.'.format(self.xi))
        if self.box_metric not in BOX_METRICS:
            msg = 'LossWeights.box_metric must be one of {0}, got {1!r}.'
            raise ValueError(msg.format(BOX_METRICS, self.box_metric))


@dataclass
class LossReport:
    """
    Attributes
    ----------
    l_box, l_cls, l_theta : float
        Sums over scales of the per-scale terms.
    l_obj : float
        xi-weighted sum over scales of the objectness term.
    total : float
        Weighted combination of the four sums.
    per_scale : list of dict
        Raw per-scale terms (None where there was nothing to average).
    objectness_targets : list of numpy.ndarray
        Per scale, the objectness target T used by L_obj. Only filled by
        :func:`compute_loss`; not part of :meth:`to_dict`.
    """
    l_box: float = 0.0
    l_obj: float = 0.0
    l_cls: float = 0.0
    l_theta: float = 0.0
    total: float = 0.0
    per_scale: list = field(default_factory=list)
    objectness_targets: list = field(default_factory=list)

    def to_dict(self):
        return {'l_box': self.l_box, 'l_obj': self.l_obj, 'l_cls': self.l_cls,
                'l_theta': self.l_theta, 'total': self.total,
                'per_scale': self.per_scale}


def bce_with_logits(logits, targets):
    """
    Element-wise binary cross entropy between sigmoid(logits) and targets.

    Uses log sigmoid directly, and drops a log term whose weight is zero, so
    saturated logits (including +/- inf) give finite values.
    """
    z = np.asarray(logits, dtype=float)
    t = np.asarray(targets, dtype=float)
    z, t = np.broadcast_arrays(z, t)

    with np.errstate(invalid='ignore'):
        pos = np.where(t > 0, t * log_expit(z), 0.0)
        neg = np.where(t < 1, (1 - t) * log_expit(-z), 0.0)
    return -(pos + neg)


def loss_box(pred_boxes, target_boxes, metric='ciou', return_values=False):
    """
    Mean of 1 - metric over assigned rows.

    Parameters
    ----------
    pred_boxes, target_boxes : array_like
        (n, 4) arrays of (x, y, w, h).
    metric : {'iou', 'giou', 'diou', 'ciou'}
    return_values : bool
        Also return the per-row metric values.

    Returns
    -------
    loss : float or None
        None when there are no rows.
    values : numpy.ndarray
        Only with ``return_values``.
    """
    pred_boxes = np.asarray(pred_boxes, dtype=float).reshape(-1, 4)
    target_boxes = np.asarray(target_boxes, dtype=float).reshape(-1, 4)
    if len(pred_boxes) == 0:
        loss, values = None, np.zeros(0)
    else:
        values = geometry.box_metric_arrays(pred_boxes, target_boxes, metric=metric)
        loss = float(np.mean(1.0 - values))
    if return_values:
        return loss, values
    return loss


def loss_obj(objectness_logits, t):
    """
    Mean BCE over every cell (denominator N_B * N_A * N_Gh * N_Gw).
    """
    objectness_logits = np.asarray(objectness_logits, dtype=float)
    t = np.asarray(t, dtype=float)
    if objectness_logits.shape != t.shape:
        msg = 'Objectness shape {0} does not match target shape {1}.'
        raise ValueError(msg.format(objectness_logits.shape, t.shape))
    return float(np.mean(bce_with_logits(objectness_logits, t)))


def _loss_one_hot(logits, one_hot):
    logits = np.asarray(logits, dtype=float)
    one_hot = np.asarray(one_hot, dtype=float)
    if logits.shape != one_hot.shape:
        msg = 'Selected logits shape {0} does not match one-hot shape {1}.'
        raise ValueError(msg.format(logits.shape, one_hot.shape))
    if logits.ndim != 2 or logits.shape[0] == 0 or logits.shape[1] == 0:
        return None
    return float(np.mean(bce_with_logits(logits, one_hot)))


def loss_cls(selected_logits, one_hot):
    """Mean BCE over n_t x N_C entries; None when n_t = 0."""
    return _loss_one_hot(selected_logits, one_hot)


def loss_theta(selected_logits, one_hot):
    """Mean BCE over n_t x N_D entries; None when n_t = 0."""
    return _loss_one_hot(selected_logits, one_hot)


def loss_total(per_scale, weights):
    """
    Weighted total over scales.

    Parameters
    ----------
    per_scale : list of dict
        One dict per scale with keys l_box, l_obj, l_cls, l_theta; None
        values count as 0.
    weights : LossWeights
        ``xi`` must have one entry per scale.

    Returns
    -------
    report : LossReport
    """
    if len(weights.xi) != len(per_scale):
        msg = 'Got {0:d} objectness weights for {1:d} scales.'
        raise ValueError(msg.format(len(weights.xi), len(per_scale)))

    def term(comp, key):
        val = comp.get(key)
        return 0.0 if val is None else float(val)

    l_box = sum(term(c, 'l_box') for c in per_scale)
    l_obj = sum(xi * term(c, 'l_obj') for xi, c in zip(weights.xi, per_scale))
    l_cls = sum(term(c, 'l_cls') for c in per_scale)
    l_theta = sum(term(c, 'l_theta') for c in per_scale)

    total = (weights.gamma_box * l_box + weights.gamma_obj * l_obj +
             weights.gamma_cls * l_cls + weights.gamma_theta * l_theta)

    return LossReport(l_box=l_box, l_obj=l_obj, l_cls=l_cls, l_theta=l_theta,
                      total=total, per_scale=list(per_scale))


def compute_loss(tensors, ts, cfg, weights=None):
    """
    Full forward loss for per-scale prediction tensors and a target set.

    Parameters
    ----------
    tensors : list of numpy.ndarray
        Per scale, (N_B, N_A, N_Gh, N_Gw, 5 + N_C + N_D).
    ts : list of list
        Per image (RotatedBox, class_id) targets; one list per batch image.
    cfg : HeadConfig
    weights : LossWeights, optional

    Returns
    -------
    report : LossReport
    """
    if weights is None:
        weights = LossWeights()
    tensors = [np.asarray(t, dtype=float) for t in tensors]
    n_b = check_tensors(tensors, cfg)
    if len(ts) != n_b:
        msg = 'Batch has {0:d} images but the target set has {1:d}.'
        raise ValueError(msg.format(n_b, len(ts)))

    assigned = build_targets(ts, cfg)
    n_c = cfg.n_classes
    per_scale = []
    t_objs = []

    for scale, tensor in enumerate(tensors):
        rows = assigned.at_scale(scale)
        t_obj = assigned.objectness[scale].copy()
        comp = {'l_box': None, 'l_obj': None, 'l_cls': None, 'l_theta': None,
                'n_rows': len(rows)}

        if rows:
            idx = np.array([(e.batch, e.anchor, e.row, e.col) for e in rows])
            b, a, k, l = idx.T
            cells = tensor[b, a, k, l]
            anchors = np.asarray(cfg.anchors[scale])
            x, y, w, h = decode_xywh(cells[:, :4], l, k, anchors[a, 0], anchors[a, 1],
                                      cfg.strides[scale], cfg.decode_mode)
            pred = np.stack([x, y, w, h], axis=-1)
            truth = np.array([[e.box.x, e.box.y, e.box.w, e.box.h] for e in rows])

            comp['l_box'], metric = loss_box(pred, truth, weights.box_metric, return_values=True)

            # Objectness target from the box term, largest value per cell.
            np.maximum.at(t_obj, (b, a, k, l), np.clip(metric, 0.0, 1.0))

            cls_one_hot = np.zeros((len(rows), n_c))
            cls_one_hot[np.arange(len(rows)), [e.class_id for e in rows]] = 1.0
            comp['l_cls'] = loss_cls(cells[:, 5:5 + n_c], cls_one_hot)

            if cfg.rotated:
                if weights.angle_smoothing_radius > 0:
                    ang_label = np.array([smooth_angle_label(bin_center(e.angle_bin, cfg.angle_granularity),
                                                             cfg.angle_granularity,
                                                             weights.angle_smoothing_radius)
                                          for e in rows])
                else:
                    ang_label = np.zeros((len(rows), cfg.angle_granularity))
                    ang_label[np.arange(len(rows)), [e.angle_bin for e in rows]] = 1.0
                comp['l_theta'] = loss_theta(cells[:, 5 + n_c:], ang_label)

        comp['l_obj'] = loss_obj(tensor[..., 4], t_obj)
        per_scale.append(comp)
        t_objs.append(t_obj)

    report = loss_total(per_scale, weights)
    report.objectness_targets = t_objs
    logger.debug('Loss total %.6f over %d assignment rows.', report.total, len(assigned))
    return report
