"""
.. module:: geometry
    :platform: Unix, Mac, Windows
    :synopsis: Horizontal and rotated box geometry.

Box conventions used throughout royolo:

    * Image coordinates: origin at the top-left corner, x increases to the
      right and y increases downward. All lengths are in pixels.
    * A horizontal box is (x, y, w, h) with (x, y) the center.
    * A rotated box is (x, y, w, h, theta). theta is in degrees, positive
      clockwise on screen, and rotates the axis-aligned (w, h) rectangle
      about its center. The canonical range is 0 <= theta < 90; every
      90 degree crossing swaps w and h.

Radians only appear inside the trig calls.
"""
import math
from typing import NamedTuple

import numpy as np

# Clipped areas below this are float noise.
AREA_EPS = 1e-12
# Relative distance below which a vertex sits on a clip edge.
CLIP_TOL = 1e-9


class HorizontalBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float


class RotatedBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float
    theta: float = 0.0

    @property
    def horizontal(self):
        """The (x, y, w, h) rectangle that ignores theta."""
        return HorizontalBox(self.x, self.y, self.w, self.h)

    @property
    def area(self):
        return self.w * self.h


def _check_finite(**values):
    for name, val in values.items():
        if not math.isfinite(val):
            msg = 'Box parameter {0:s} must be finite, got {1}.'
            raise ValueError(msg.format(name, val))


def _check_size(w, h):
    if w <= 0 or h <= 0:
        msg = 'Box width and height must be positive, got w={0}, h={1}.'
        raise ValueError(msg.format(w, h))


def canonicalize(x, y, w, h, theta_raw=0.0):
    """
    Bring a rotated box into the canonical 0 <= theta < 90 range.

    Rotating a (w, h) rectangle by 90 degrees gives the same point set as the
    (h, w) rectangle, so each quarter turn removed from theta swaps the edges.

    Parameters
    ----------
    x, y : float
        Center in pixels.
    w, h : float
        Edge lengths in pixels, both positive.
    theta_raw : float
        Rotation in degrees, any real value.

    Returns
    -------
    box : RotatedBox
    """
    x, y, w, h, theta_raw = (float(v) for v in (x, y, w, h, theta_raw))
    _check_finite(x=x, y=y, w=w, h=h, theta=theta_raw)
    _check_size(w, h)

    turns = math.floor(theta_raw / 90.0)
    theta = theta_raw - 90.0 * turns

    # Rounding can land exactly on 90 (e.g. theta_raw = -1e-17).
    if theta >= 90.0:
        theta -= 90.0
        turns += 1
    if theta < 0.0:
        theta = 0.0

    if turns % 2:
        w, h = h, w

    return RotatedBox(x, y, w, h, theta)


def corners(box):
    """
    Corner points of a rotated box.

    The corners of the axis-aligned (w, h) rectangle are taken in the order
    (-w/2, -h/2), (w/2, -h/2), (w/2, h/2), (-w/2, h/2) and rotated about the
    center by theta. This order has positive shoelace area, so the interior
    is on the left of every directed edge.

    Parameters
    ----------
    box : RotatedBox or HorizontalBox

    Returns
    -------
    quad : numpy.ndarray
        Array of shape (4, 2) holding (px, py) rows.
    """
    theta = getattr(box, 'theta', 0.0)
    rad = math.radians(theta)
    cos_t = math.cos(rad)
    sin_t = math.sin(rad)

    hw = box.w / 2.0
    hh = box.h / 2.0
    local = np.array([[-hw, -hh],
                      [hw, -hh],
                      [hw, hh],
                      [-hw, hh]])
    rot = np.array([[cos_t, -sin_t],
                    [sin_t, cos_t]])

    quad = local @ rot.T
    quad[:, 0] += box.x
    quad[:, 1] += box.y

    return quad


def fit_box(quad):
    """
    Recover a canonical rotated box from the four corners of a rectangle.

    The corners must be in the order produced by :func:`corners` (or any
    cyclic shift of it). Reflected (negatively oriented) quads are accepted
    too.
    """
    quad = np.asarray(quad, dtype=float)
    if quad.shape != (4, 2):
        raise ValueError('Expected a (4, 2) corner array, got shape {0}.'.format(quad.shape))

    if signed_area(quad) < 0:
        quad = quad[::-1]

    center = quad.mean(axis=0)
    edge_w = quad[1] - quad[0]
    edge_h = quad[3] - quad[0]
    w = math.hypot(edge_w[0], edge_w[1])
    h = math.hypot(edge_h[0], edge_h[1])
    theta = math.degrees(math.atan2(edge_w[1], edge_w[0]))

    return canonicalize(center[0], center[1], w, h, theta)


def signed_area(points):
    """Shoelace area; positive for the corner order used by :func:`corners`."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    x = pts[:, 0]
    y = pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(points):
    return abs(signed_area(points))


def clip_polygon(subject, clip):
    """
    Sutherland-Hodgman clipping of ``subject`` against the convex ``clip``.

    Both polygons are lists or arrays of (x, y) vertices. The clip polygon is
    re-oriented internally so either winding works.

    Returns
    -------
    points : list of tuple
        Vertices of the intersection polygon, possibly empty.
    """
    subject = np.asarray(subject, dtype=float).reshape(-1, 2)
    clip = np.asarray(clip, dtype=float).reshape(-1, 2)
    if len(subject) == 0 or len(clip) == 0:
        return []
    if signed_area(clip) < 0:
        clip = clip[::-1]
    # vertices this close to a clip edge line count as on it
    tol = CLIP_TOL * max(1.0, float(np.abs(subject).max()), float(np.abs(clip).max()))

    output = [tuple(p) for p in subject]
    cp1 = clip[-1]
    for cp2 in clip:
        if len(output) == 0:
            return []
        edge = cp2 - cp1
        length = math.hypot(edge[0], edge[1])
        if length == 0.0:
            continue
        pts = np.asarray(output)
        # signed distance to the edge line, positive on the inner side
        dist = (edge[0] * (pts[:, 1] - cp1[1]) - edge[1] * (pts[:, 0] - cp1[0])) / length
        keep = dist >= -tol

        input_list = output
        output = []
        n = len(input_list)
        for i in range(n):
            j = i - 1
            s, e = input_list[j], input_list[i]
            if keep[i] != keep[j]:
                t = min(max(dist[j] / (dist[j] - dist[i]), 0.0), 1.0)
                output.append((s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t))
            if keep[i]:
                output.append(e)
        cp1 = cp2

    return output


def iou_horizontal(a, b):
    """
    Intersection over union of two horizontal boxes.

    Any object with x, y, w, h attributes works; theta is ignored.
    """
    ix = min(a.x + a.w / 2, b.x + b.w / 2) - max(a.x - a.w / 2, b.x - b.w / 2)
    iy = min(a.y + a.h / 2, b.y + b.h / 2) - max(a.y - a.h / 2, b.y - b.h / 2)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return inter / union


def box_metric_arrays(a, b, metric='iou', eps=1e-16):
    """
    Element-wise IoU family metric between two (N, 4) arrays of (x, y, w, h).

    Parameters
    ----------
    a, b : array_like
        Horizontal boxes, broadcastable against each other.
    metric : {'iou', 'giou', 'diou', 'ciou'}

    Returns
    -------
    values : numpy.ndarray
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    a_x1 = a[..., 0] - a[..., 2] / 2
    a_x2 = a[..., 0] + a[..., 2] / 2
    a_y1 = a[..., 1] - a[..., 3] / 2
    a_y2 = a[..., 1] + a[..., 3] / 2
    b_x1 = b[..., 0] - b[..., 2] / 2
    b_x2 = b[..., 0] + b[..., 2] / 2
    b_y1 = b[..., 1] - b[..., 3] / 2
    b_y2 = b[..., 1] + b[..., 3] / 2

    inter = (np.clip(np.minimum(a_x2, b_x2) - np.maximum(a_x1, b_x1), 0, None) *
             np.clip(np.minimum(a_y2, b_y2) - np.maximum(a_y1, b_y1), 0, None))
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)

    if metric == 'iou':
        return iou

    # Smallest enclosing box
    cw = np.maximum(a_x2, b_x2) - np.minimum(a_x1, b_x1)
    ch = np.maximum(a_y2, b_y2) - np.minimum(a_y1, b_y1)

    if metric == 'giou':
        c_area = cw * ch + eps
        return iou - (c_area - union) / c_area

    c2 = cw ** 2 + ch ** 2 + eps
    rho2 = (b[..., 0] - a[..., 0]) ** 2 + (b[..., 1] - a[..., 1]) ** 2
    if metric == 'diou':
        return iou - rho2 / c2

    if metric == 'ciou':
        v = (4 / math.pi ** 2) * (np.arctan(b[..., 2] / b[..., 3]) -
                                  np.arctan(a[..., 2] / a[..., 3])) ** 2
        alpha = v / (1 - iou + v + eps)
        return iou - (rho2 / c2 + v * alpha)

    raise ValueError('Unknown box metric {0!r}; use iou, giou, diou or ciou.'.format(metric))


def box_metric(a, b, metric='iou'):
    """Scalar form of :func:`box_metric_arrays` for two boxes."""
    va = [a.x, a.y, a.w, a.h]
    vb = [b.x, b.y, b.w, b.h]
    return float(box_metric_arrays(va, vb, metric=metric))


def ciou_horizontal(a, b):
    """
    Complete IoU: IoU minus the normalized center distance and an
    aspect-ratio consistency penalty. Equals 1 for identical boxes and is
    negative for distant disjoint boxes.
    """
    return box_metric(a, b, metric='ciou')


def iou_matrix_horizontal(boxes_a, boxes_b):
    """
    Pairwise IoU between (N, 4) and (M, 4) arrays of (x, y, w, h).

    Returns
    -------
    ious : numpy.ndarray
        Shape (N, M).
    """
    boxes_a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    return box_metric_arrays(boxes_a[:, None, :], boxes_b[None, :, :], metric='iou')


def iou_exact(a, b):
    """
    Exact rotated IoU by convex polygon clipping.

    I is the area of the clipped intersection polygon and
    U = area(a) + area(b) - I.
    """
    quad_a = corners(a)
    quad_b = corners(b)

    inter = polygon_area(clip_polygon(quad_a, quad_b))
    if inter < AREA_EPS:
        return 0.0

    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def horizontal_envelope(box):
    """Smallest axis-aligned box enclosing a rotated box."""
    quad = corners(box)
    x_min, y_min = quad.min(axis=0)
    x_max, y_max = quad.max(axis=0)
    return HorizontalBox((x_min + x_max) / 2, (y_min + y_max) / 2,
                         x_max - x_min, y_max - y_min)


def _convex_hull(points):
    # Monotone chain; returns the hull with positive shoelace area.
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    return lower[:-1] + upper[:-1]


def min_area_rect(points):
    """
    Minimum-area rotated rectangle enclosing a point set.

    One side of the optimal rectangle is collinear with a hull edge, so every
    hull edge direction is tried.

    Returns
    -------
    box : RotatedBox
        Canonical box. Raises ValueError for degenerate (collinear) input.
    """
    hull = np.asarray(_convex_hull(points), dtype=float)
    if len(hull) < 3 or polygon_area(hull) < AREA_EPS:
        raise ValueError('Cannot fit a rectangle to a degenerate point set.')

    best = None
    for i in range(len(hull)):
        edge = hull[(i + 1) % len(hull)] - hull[i]
        angle = math.atan2(edge[1], edge[0])
        cos_a = math.cos(angle)
        sin_a = math.sin(angle)

        # Express the hull in the edge-aligned frame.
        u = hull[:, 0] * cos_a + hull[:, 1] * sin_a
        v = -hull[:, 0] * sin_a + hull[:, 1] * cos_a
        w = u.max() - u.min()
        h = v.max() - v.min()
        area = w * h

        if best is None or area < best[0] - AREA_EPS:
            uc = (u.max() + u.min()) / 2
            vc = (v.max() + v.min()) / 2
            xc = uc * cos_a - vc * sin_a
            yc = uc * sin_a + vc * cos_a
            best = (area, xc, yc, w, h, math.degrees(angle))

    _, xc, yc, w, h, theta = best
    return canonicalize(xc, yc, w, h, theta)
