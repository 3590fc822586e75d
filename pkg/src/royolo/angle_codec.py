"""
Angle classification codec.

The canonical angle range [0, 90) is split into ``n_d`` equal bins. A box
angle is encoded as the index of its bin and a bin (or a score vector over
bins) is decoded to the bin center, so the worst-case quantization error is
half a bin, 45 / n_d degrees. n_d = 90 gives 1 degree bins and n_d = 180
gives 0.5 degree bins.
"""
import math
from typing import NamedTuple

import numpy as np


class AngleGranularity(NamedTuple):
    n_d: int = 180

    @property
    def bin_width(self):
        return 90.0 / self.n_d


def _granularity(g):
    if isinstance(g, AngleGranularity):
        n_d = g.n_d
    else:
        n_d = int(g)
    if n_d < 1:
        raise ValueError('Angle granularity must be at least 1, got {0}.'.format(n_d))
    return n_d


def encode_angle(theta, g):
    """
    Bin index of a canonical angle.

    Parameters
    ----------
    theta : float
        Degrees, 0 <= theta < 90. Canonicalize boxes first.
    g : AngleGranularity or int
        Number of bins n_d.

    Returns
    -------
    index : int
        floor(theta * n_d / 90), in [0, n_d - 1].
    """
    n_d = _granularity(g)
    if not (0.0 <= theta < 90.0):
        msg = 'Angle {0} is outside [0, 90); canonicalize the box first.'
        raise ValueError(msg.format(theta))

    index = int(math.floor(theta * n_d / 90.0))
    # theta just below 90 can round up to n_d
    return min(index, n_d - 1)


def bin_center(index, g):
    n_d = _granularity(g)
    return (index + 0.5) * 90.0 / n_d


def decode_angle(scores):
    """
    Degrees at the center of the highest-scoring bin.

    Ties go to the lower index (numpy.argmax returns the first maximum).

    Parameters
    ----------
    scores : array_like
        n_d real scores (logits or probabilities).
    """
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise ValueError('Cannot decode an angle from an empty score vector.')
    return bin_center(int(np.argmax(scores)), scores.size)


def decode_angles(scores):
    """Vectorized :func:`decode_angle` over the last axis."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape[-1] == 0:
        raise ValueError('Cannot decode an angle from an empty score vector.')
    n_d = scores.shape[-1]
    return (np.argmax(scores, axis=-1) + 0.5) * 90.0 / n_d


def one_hot_angle(theta, g):
    """One-hot target row over the n_d angle bins."""
    n_d = _granularity(g)
    row = np.zeros(n_d)
    row[encode_angle(theta, n_d)] = 1.0
    return row


def smooth_angle_label(theta, g, radius=0.0):
    """
    Gaussian-window angle label centered on the target bin.

    ``radius`` is the window sigma in bins; 0 gives the plain one-hot row.
    The window is truncated at both ends of [0, 90) instead of wrapping,
    since crossing 90 degrees swaps w and h and is a different label.
    """
    n_d = _granularity(g)
    if radius <= 0:
        return one_hot_angle(theta, n_d)

    center = encode_angle(theta, n_d)
    x = np.arange(n_d) - center
    return np.exp(-x ** 2 / (2.0 * radius ** 2))
