"""
.. module:: head_decode
    :platform: Unix, Mac, Windows
    :synopsis: Decode raw YOLO head tensors into detections.

Each grid scale produces a prediction tensor P of shape

    (N_B, N_A, N_Gh, N_Gw, 5 + N_C + N_D)

with N_Gh = H / stride and N_Gw = W / stride. The last axis holds

    [0:4]                 box raws p_0 .. p_3
    [4]                   objectness logit
    [5:5+N_C]             class logits
    [5+N_C:5+N_C+N_D]     angle-bin logits (absent when N_D = 0)

The box raws of the cell in row k, column l, with anchor (W_A, H_A), decode to

    x_p = (l + 2 sigma(p_0) - 0.5) * stride
    y_p = (k + 2 sigma(p_1) - 0.5) * stride
    w_p = 4 sigma(p_2)^2 W_A
    h_p = 4 sigma(p_3)^2 H_A

decode_mode='paper_literal' instead adds the unitless offset to the pixel
position of the cell, x_p = l * stride + 2 sigma(p_0) - 0.5.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import kmeans
from scipy.special import expit, logit

from royolo import angle_codec
from royolo.geometry import HorizontalBox, RotatedBox

logger = logging.getLogger(__name__)

DECODE_MODES = ('corrected', 'paper_literal')

# YOLO-V5 P3/P4/P5 anchors in pixels; regenerate with kmeans_anchors().
DEFAULT_ANCHORS = (((10.0, 13.0), (16.0, 30.0), (33.0, 23.0)),
                   ((30.0, 61.0), (62.0, 45.0), (59.0, 119.0)),
                   ((116.0, 90.0), (156.0, 198.0), (373.0, 326.0)))


@dataclass(frozen=True)
class HeadConfig:
    """
    Head geometry.

    Attributes
    ----------
    image_w, image_h : int
        Network input size in pixels.
    strides : tuple of int
        Grid step per scale, ascending (8, 16, 32).
    anchors : tuple
        Per scale, a tuple of (W_A, H_A) pixel pairs.
    n_classes : int
        N_C.
    angle_granularity : int
        N_D; 0 selects horizontal mode (no angle channels).
    decode_mode : {'corrected', 'paper_literal'}
    """
    image_w: int = 640
    image_h: int = 640
    strides: tuple = (8, 16, 32)
    anchors: tuple = DEFAULT_ANCHORS
    n_classes: int = 6
    angle_granularity: int = 180
    decode_mode: str = 'corrected'

    def __post_init__(self):
        object.__setattr__(self, 'strides', tuple(int(s) for s in self.strides))
        object.__setattr__(self, 'anchors', tuple(tuple((float(a[0]), float(a[1])) for a in scale)
                                                  for scale in self.anchors))
        if len(self.strides) < 1:
            raise ValueError('HeadConfig needs at least one stride.')
        if list(self.strides) != sorted(set(self.strides)):
            raise ValueError('HeadConfig.strides must be strictly ascending, got {0}.'.format(self.strides))
        if len(self.anchors) != len(self.strides):
            msg = 'HeadConfig has {0:d} strides but {1:d} anchor groups.'
            raise ValueError(msg.format(len(self.strides), len(self.anchors)))
        for stride in self.strides:
            if self.image_w % stride or self.image_h % stride:
                msg = 'Image size {0:d}x{1:d} is not divisible by stride {2:d}.'
                raise ValueError(msg.format(self.image_w, self.image_h, stride))
        for scale in self.anchors:
            if len(scale) < 1:
                raise ValueError('Every scale needs at least one anchor.')
            for w_a, h_a in scale:
                if w_a <= 0 or h_a <= 0:
                    raise ValueError('Anchor sizes must be positive, got {0}.'.format((w_a, h_a)))
        if self.n_classes < 1:
            raise ValueError('HeadConfig.n_classes must be at least 1.')
        if self.angle_granularity < 0:
            raise ValueError('HeadConfig.angle_granularity must be >= 0.')
        if self.decode_mode not in DECODE_MODES:
            msg = 'HeadConfig.decode_mode must be one of {0}, got {1!r}.'
            raise ValueError(msg.format(DECODE_MODES, self.decode_mode))

    @property
    def n_scales(self):
        return len(self.strides)

    @property
    def n_channels(self):
        return 5 + self.n_classes + self.angle_granularity

    @property
    def rotated(self):
        return self.angle_granularity > 0

    def grid_shape(self, scale):
        stride = self.strides[scale]
        return self.image_h // stride, self.image_w // stride

    def tensor_shape(self, scale, n_b=1):
        n_gh, n_gw = self.grid_shape(scale)
        return (n_b, len(self.anchors[scale]), n_gh, n_gw, self.n_channels)


class Detection(NamedTuple):
    """
    One decoded candidate.

    Provenance fields are -1 for detections that did not come from a tensor
    (e.g. read from a file).
    """
    box: RotatedBox
    class_id: int
    confidence: float
    scale: int = -1
    batch: int = -1
    anchor: int = -1
    row: int = -1
    col: int = -1

    @property
    def provenance(self):
        return (self.scale, self.anchor, self.row, self.col)


def anchor_ratio(w, h, anchor):
    """Largest edge ratio between a box and an anchor, in either direction."""
    w_a, h_a = anchor
    return max(w / w_a, w_a / w, h / h_a, h_a / h)


def decode_xywh(raw, col, row, anchor_w, anchor_h, stride, mode):
    sig = expit(np.asarray(raw, dtype=float))
    if mode == 'corrected':
        x = (col + 2 * sig[..., 0] - 0.5) * stride
        y = (row + 2 * sig[..., 1] - 0.5) * stride
    elif mode == 'paper_literal':
        x = col * stride + 2 * sig[..., 0] - 0.5
        y = row * stride + 2 * sig[..., 1] - 0.5
    else:
        raise ValueError('Unknown decode mode {0!r}.'.format(mode))
    w = 4 * sig[..., 2] ** 2 * anchor_w
    h = 4 * sig[..., 3] ** 2 * anchor_h
    return x, y, w, h


def decode_cell(p, anchor, cell, stride, mode='corrected'):
    """
    Decode the four box raws of one cell and anchor.

    Parameters
    ----------
    p : array_like
        At least four raw values; only p[0:4] are used.
    anchor : tuple
        (W_A, H_A) in pixels.
    cell : tuple
        Grid (row k, column l).
    stride : int
        Grid step in pixels.

    Returns
    -------
    box : HorizontalBox
    """
    k, l = cell
    x, y, w, h = decode_xywh(np.asarray(p, dtype=float)[:4], l, k,
                              anchor[0], anchor[1], stride, mode)
    return HorizontalBox(float(x), float(y), float(w), float(h))


def encode_cell(box, anchor, cell, stride, mode='corrected'):
    """
    Raws that :func:`decode_cell` maps back to ``box``.

    Raises ValueError when the box is outside the reachable range of the
    cell: the center must lie strictly within half a stride around the cell
    and 0 < w < 4 W_A, 0 < h < 4 H_A.

    Returns
    -------
    raws : numpy.ndarray
        Shape (4,).
    """
    k, l = cell
    if mode == 'corrected':
        sig_x = (box.x / stride - l + 0.5) / 2
        sig_y = (box.y / stride - k + 0.5) / 2
    elif mode == 'paper_literal':
        sig_x = (box.x - l * stride + 0.5) / 2
        sig_y = (box.y - k * stride + 0.5) / 2
    else:
        raise ValueError('Unknown decode mode {0!r}.'.format(mode))
    sig_w = np.sqrt(box.w / (4 * anchor[0])) if box.w > 0 else 0.0
    sig_h = np.sqrt(box.h / (4 * anchor[1])) if box.h > 0 else 0.0

    sig = np.array([sig_x, sig_y, sig_w, sig_h])
    if np.any(sig <= 0) or np.any(sig >= 1):
        msg = 'Box {0} cannot be decoded from cell {1} with anchor {2} at stride {3}.'
        raise ValueError(msg.format(tuple(box), cell, anchor, stride))

    return logit(sig)


def check_tensors(tensors, cfg):
    """Validate per-scale tensors against the head config; returns N_B."""
    if len(tensors) != cfg.n_scales:
        msg = 'Expected {0:d} scale tensors, got {1:d}.'
        raise ValueError(msg.format(cfg.n_scales, len(tensors)))

    n_b = None
    for scale, tensor in enumerate(tensors):
        tensor = np.asarray(tensor)
        expected = cfg.tensor_shape(scale, n_b=tensor.shape[0] if tensor.ndim else 0)
        if tensor.shape != expected:
            msg = 'Scale {0:d} tensor has shape {1}, expected {2}.'
            raise ValueError(msg.format(scale, tensor.shape, expected))
        if n_b is None:
            n_b = tensor.shape[0]
        elif tensor.shape[0] != n_b:
            raise ValueError('All scale tensors must share the batch size.')
    return n_b


def confidence_map(tensor, n_classes):
    """
    sigmoid(objectness) * max class probability, and the argmax class.

    Returns
    -------
    conf, class_id : numpy.ndarray
        Both of shape tensor.shape[:-1].
    """
    obj = expit(tensor[..., 4])
    cls = expit(tensor[..., 5:5 + n_classes])
    class_id = np.argmax(cls, axis=-1)
    best = np.take_along_axis(cls, class_id[..., None], axis=-1)[..., 0]
    return obj * best, class_id


def decode_batch(tensors, cfg, conf_thresh=0.45):
    """
    Decode per-scale head tensors into per-image detection lists.

    Every cell x anchor whose confidence reaches ``conf_thresh`` yields one
    detection; there is no de-duplication before NMS. Within an image the
    order is (scale, anchor, row, column).

    Parameters
    ----------
    tensors : list of numpy.ndarray
        One tensor per scale, shapes per :meth:`HeadConfig.tensor_shape`.
    cfg : HeadConfig
    conf_thresh : float

    Returns
    -------
    detections : list of list of Detection
        One list per batch image.
    """
    tensors = [np.asarray(t, dtype=float) for t in tensors]
    n_b = check_tensors(tensors, cfg)
    n_c = cfg.n_classes
    out = [[] for _ in range(n_b)]

    for scale, tensor in enumerate(tensors):
        stride = cfg.strides[scale]
        anchors = np.asarray(cfg.anchors[scale])
        conf, class_id = confidence_map(tensor, n_c)
        passed = conf >= conf_thresh

        for b in range(n_b):
            a_idx, k_idx, l_idx = np.nonzero(passed[b])
            if len(a_idx) == 0:
                continue
            cells = tensor[b, a_idx, k_idx, l_idx]
            x, y, w, h = decode_xywh(cells[:, :4], l_idx, k_idx,
                                      anchors[a_idx, 0], anchors[a_idx, 1],
                                      stride, cfg.decode_mode)
            if cfg.rotated:
                theta = angle_codec.decode_angles(cells[:, 5 + n_c:])
            else:
                theta = np.zeros(len(a_idx))

            for n in range(len(a_idx)):
                box = RotatedBox(float(x[n]), float(y[n]), float(w[n]), float(h[n]), float(theta[n]))
                out[b].append(Detection(box=box,
                                        class_id=int(class_id[b, a_idx[n], k_idx[n], l_idx[n]]),
                                        confidence=float(conf[b, a_idx[n], k_idx[n], l_idx[n]]),
                                        scale=scale, batch=b, anchor=int(a_idx[n]),
                                        row=int(k_idx[n]), col=int(l_idx[n])))

    logger.debug('Decoded %d detections over %d images.', sum(len(d) for d in out), n_b)
    return out


def host_cell(x, y, stride, grid_shape):
    """Grid (row, col) containing a pixel position, clamped to the grid."""
    n_gh, n_gw = grid_shape
    k = min(max(int(np.floor(y / stride)), 0), n_gh - 1)
    l = min(max(int(np.floor(x / stride)), 0), n_gw - 1)
    return k, l


def encode_targets(targets, cfg, high=20.0, low=-20.0, angle_shift=0):
    """
    Build head tensors that decode exactly to the given labels.

    Every cell starts at objectness, class and angle logits ``low``. For each
    target the best-ratio (scale, anchor) whose host cell is still free gets
    the analytic inverse of its box, objectness ``high``, class logit ``high``
    and angle logit ``high`` at its bin. ``angle_shift`` moves the hot angle
    bin by a number of bins (clipped to the valid range) to build deliberately
    wrong angle predictions.

    Parameters
    ----------
    targets : list of list
        Per image, (RotatedBox, class_id) pairs.
    cfg : HeadConfig

    Returns
    -------
    tensors : list of numpy.ndarray
    """
    n_b = len(targets)
    n_c = cfg.n_classes
    tensors = []
    for scale in range(cfg.n_scales):
        t = np.zeros(cfg.tensor_shape(scale, n_b=n_b))
        t[..., 4:] = low
        tensors.append(t)

    taken = set()
    for b, image_targets in enumerate(targets):
        for box, class_id in image_targets:
            candidates = []
            for scale in range(cfg.n_scales):
                for j, anchor in enumerate(cfg.anchors[scale]):
                    ratio = anchor_ratio(box.w, box.h, anchor)
                    if ratio < 4.0:
                        candidates.append((ratio, scale, j))
            candidates.sort()

            for _, scale, j in candidates:
                stride = cfg.strides[scale]
                k, l = host_cell(box.x, box.y, stride, cfg.grid_shape(scale))
                if (b, scale, j, k, l) in taken:
                    continue
                raws = encode_cell(box, cfg.anchors[scale][j], (k, l), stride, cfg.decode_mode)
                cell = tensors[scale][b, j, k, l]
                cell[:4] = raws
                cell[4] = high
                cell[5 + int(class_id)] = high
                if cfg.rotated:
                    bin_idx = angle_codec.encode_angle(box.theta, cfg.angle_granularity)
                    bin_idx = min(max(bin_idx + angle_shift, 0), cfg.angle_granularity - 1)
                    cell[5 + n_c + bin_idx] = high
                taken.add((b, scale, j, k, l))
                break
            else:
                msg = 'No free cell and anchor can encode target {0} in image {1:d}.'
                raise ValueError(msg.format(tuple(box), b))

    return tensors


def kmeans_anchors(wh, n_scales=3, n_per_scale=3, seed=0):
    """
    Anchors from k-means over label (w, h) pairs.

    The (w, h) pairs are whitened by their standard deviation, clustered into
    n_scales * n_per_scale centroids, sorted by area and split into scales
    from small to large.

    Returns
    -------
    anchors : tuple
        Per scale, a tuple of (W_A, H_A) pairs rounded to 0.1 pixel.
    """
    wh = np.asarray(wh, dtype=float).reshape(-1, 2)
    n = n_scales * n_per_scale
    if len(wh) < n:
        msg = 'Need at least {0:d} boxes for {0:d} anchors, got {1:d}.'
        raise ValueError(msg.format(n, len(wh)))

    sigma = wh.std(axis=0)
    sigma[sigma == 0] = 1.0
    centroids, dist = kmeans(wh / sigma, n, iter=30, seed=seed)
    centroids = centroids * sigma
    if len(centroids) < n:
        logger.warning('k-means returned %d distinct anchors for %d requested; repeating the largest.',
                       len(centroids), n)
        centroids = np.vstack([centroids, np.repeat(centroids[-1:], n - len(centroids), axis=0)])

    centroids = centroids[np.argsort(centroids.prod(axis=1), kind='stable')]
    logger.info('k-means anchors: mean whitened distance %.3f', dist)

    return tuple(tuple((round(float(w), 1), round(float(h), 1))
                       for w, h in centroids[s * n_per_scale:(s + 1) * n_per_scale])
                 for s in range(n_scales))
