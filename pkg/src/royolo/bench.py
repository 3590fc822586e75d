"""
.. module:: bench
    :platform: Unix, Mac, Windows
    :synopsis: Mask-size benchmark and the end-to-end pipeline.

The benchmark sweeps mask sizes and, for each, measures how far the masked
rotated IoU lands from the exact polygon IoU on seeded box pairs, how fast it
runs, and how long rotated NMS takes per image. Error statistics are computed
once per size; timings are the median of ``repetitions`` runs after
``warmup`` discarded runs. Only post-processing is timed.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from astropy.table import Table
from joblib import Parallel, delayed

from royolo import geometry
from royolo.eval_metrics import evaluate
from royolo.head_decode import Detection, decode_batch
from royolo.mask_raster import MaskConfig, iou_ro
from royolo.nms import NmsConfig, run_nms

logger = logging.getLogger(__name__)

MASK_CACHE_POLICY = 'one mask per box per NMS call'
ANGLE_DECODE_RULE = 'bin center'
TIMING_SCOPE = 'post-processing only; network inference not included'


@dataclass(frozen=True)
class BenchSpec:
    """
    Attributes
    ----------
    mask_sizes : tuple of int
        Square mask sizes, positive and ascending.
    n_pairs : int
        Box pairs per size.
    repetitions : int
        Timed runs per size.
    warmup : int
        Untimed runs before the timed ones.
    size_range : tuple of float
        Box edge range in pixels.
    image_w, image_h : int
    union_mode : {'corrected', 'paper_literal'}
    nms_images, nms_dets : int
        Images and detections per image of the NMS timing.
    threads : int
        joblib threads for the pair loops.
    identical_pairs : bool
        Pair every box with itself (zero-error baseline).
    seed : int
    """
    mask_sizes: tuple = (50, 150, 250, 350, 450, 550, 640)
    n_pairs: int = 1000
    repetitions: int = 3
    warmup: int = 1
    size_range: tuple = (32.0, 200.0)
    image_w: int = 640
    image_h: int = 640
    union_mode: str = 'corrected'
    nms_images: int = 4
    nms_dets: int = 30
    threads: int = 1
    identical_pairs: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'mask_sizes', tuple(int(s) for s in self.mask_sizes))
        object.__setattr__(self, 'size_range', tuple(float(s) for s in self.size_range))
        sizes = self.mask_sizes
        if len(sizes) == 0 or any(s <= 0 for s in sizes):
            raise ValueError('mask_sizes must be a non-empty list of positive sizes, got {0}.'.format(sizes))
        if any(b <= a for a, b in zip(sizes[:-1], sizes[1:])):
            raise ValueError('mask_sizes must be ascending, got {0}.'.format(sizes))
        if self.repetitions < 1:
            raise ValueError('repetitions must be at least 1.')
        if self.warmup < 0 or self.n_pairs < 0 or self.nms_images < 0 or self.nms_dets < 0:
            raise ValueError('warmup, n_pairs, nms_images and nms_dets must be non-negative.')
        lo, hi = self.size_range
        if not (0 < lo <= hi):
            raise ValueError('size_range must satisfy 0 < lo <= hi, got {0}.'.format(self.size_range))
        if self.threads < 1:
            raise ValueError('threads must be at least 1.')
        # validated by MaskConfig
        MaskConfig(image_w=self.image_w, image_h=self.image_h, union_mode=self.union_mode)


@dataclass
class BenchRow:
    """One mask size of the benchmark table."""
    mask_size: int
    union_mode: str
    n_pairs: int
    mean_abs_error: float
    median_abs_error: float
    max_abs_error: float
    iou_seconds: float
    pairs_per_second: float
    nms_seconds_per_image: float = float('nan')
    timings: list = field(default_factory=list)


def _random_box(rng, size_range, image_w, image_h, center=None):
    lo, hi = size_range
    w = rng.uniform(lo, hi)
    h = rng.uniform(lo, hi)
    theta = rng.uniform(0.0, 90.0)
    if center is None:
        x = rng.uniform(0.0, image_w)
        y = rng.uniform(0.0, image_h)
    else:
        x, y = center

    # Keep the whole box on the image; masks clip, the exact IoU does not.
    reach = math.hypot(w, h) / 2
    x = min(max(x, reach), image_w - reach) if 2 * reach < image_w else image_w / 2
    y = min(max(y, reach), image_h - reach) if 2 * reach < image_h else image_h / 2
    return geometry.canonicalize(x, y, w, h, theta)


def sample_box_pairs(n, seed=0, image_w=640, image_h=640, size_range=(32.0, 200.0),
                     identical=False):
    """
    Seeded rotated box pairs whose centers are close enough to overlap
    often.

    The first box of a pair has uniform center, edges and angle; the second
    is centered within half an edge of the first. Centers are pulled in so
    every box lies inside the image. With ``identical`` the second box is a
    copy of the first.

    Returns
    -------
    pairs : list of tuple
        (RotatedBox, RotatedBox).
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        a = _random_box(rng, size_range, image_w, image_h)
        if identical:
            pairs.append((a, a))
            continue
        reach = max(a.w, a.h) / 2
        center = (a.x + rng.uniform(-reach, reach), a.y + rng.uniform(-reach, reach))
        pairs.append((a, _random_box(rng, size_range, image_w, image_h, center=center)))
    return pairs


def _map_pairs(func, pairs, threads):
    if threads == 1:
        return np.array([func(a, b) for a, b in pairs], dtype=float)
    return np.array(Parallel(n_jobs=threads, prefer='threads')(
        delayed(func)(a, b) for a, b in pairs), dtype=float)


def exact_ious(pairs, threads=1):
    return _map_pairs(geometry.iou_exact, pairs, threads)


def masked_ious(pairs, cfg, threads=1):
    return _map_pairs(lambda a, b: iou_ro(a, b, cfg), pairs, threads)


def time_call(func, repetitions=3, warmup=1):
    """
    Wall-clock samples of ``func()``.

    Returns
    -------
    timings : list of float
        Seconds, one per timed repetition; warmup runs are discarded.
    """
    for _ in range(warmup):
        func()
    timings = []
    for _ in range(repetitions):
        start = time.perf_counter()
        func()
        timings.append(time.perf_counter() - start)
    return timings


def sample_detections(n_images, n_dets, seed=0, image_w=640, image_h=640,
                      size_range=(32.0, 200.0), n_classes=3):
    """Seeded clustered rotated detections for NMS timing."""
    rng = np.random.default_rng([seed, 7])
    out = []
    for _ in range(n_images):
        pairs = sample_box_pairs(max(n_dets // 2, 1), seed=int(rng.integers(2 ** 31)),
                                 image_w=image_w, image_h=image_h, size_range=size_range)
        boxes = [b for pair in pairs for b in pair][:n_dets]
        out.append([Detection(box, int(rng.integers(n_classes)), float(rng.uniform(0.05, 1.0)))
                    for box in boxes])
    return out


def bench_nms(spec, mask_size, dets_by_image=None):
    """
    Median seconds per image of rotated masked NMS at one mask size.
    """
    if dets_by_image is None:
        dets_by_image = sample_detections(spec.nms_images, spec.nms_dets, seed=spec.seed,
                                          image_w=spec.image_w, image_h=spec.image_h,
                                          size_range=spec.size_range)
    if len(dets_by_image) == 0:
        return float('nan'), []

    cfg = NmsConfig(conf_thresh=0.0, mode='rotated',
                    mask=MaskConfig(h_m=mask_size, w_m=mask_size, image_w=spec.image_w,
                                    image_h=spec.image_h, union_mode=spec.union_mode))

    def run():
        for dets in dets_by_image:
            run_nms(dets, cfg)

    timings = time_call(run, spec.repetitions, spec.warmup)
    return float(np.median(timings)) / len(dets_by_image), timings


def bench_iou(spec, with_nms=True):
    """
    Masked-versus-exact IoU error and throughput for every mask size.

    In literal union mode the exact reference is mapped through
    IoU / (1 + IoU) so both sides use the same union rule.

    Returns
    -------
    rows : list of BenchRow
    """
    pairs = sample_box_pairs(spec.n_pairs, seed=spec.seed, image_w=spec.image_w,
                             image_h=spec.image_h, size_range=spec.size_range,
                             identical=spec.identical_pairs)
    reference = exact_ious(pairs, spec.threads)
    if spec.union_mode == 'paper_literal':
        reference = reference / (1.0 + reference)

    dets_by_image = None
    if with_nms:
        dets_by_image = sample_detections(spec.nms_images, spec.nms_dets, seed=spec.seed,
                                          image_w=spec.image_w, image_h=spec.image_h,
                                          size_range=spec.size_range)

    rows = []
    for size in spec.mask_sizes:
        cfg = MaskConfig(h_m=size, w_m=size, image_w=spec.image_w,
                         image_h=spec.image_h, union_mode=spec.union_mode)
        errors = np.abs(masked_ious(pairs, cfg, spec.threads) - reference)
        timings = time_call(lambda: masked_ious(pairs, cfg, spec.threads),
                            spec.repetitions, spec.warmup)
        seconds = float(np.median(timings))

        nms_seconds = float('nan')
        if with_nms:
            nms_seconds, _ = bench_nms(spec, size, dets_by_image)

        n = len(pairs)
        rows.append(BenchRow(mask_size=size,
                             union_mode=spec.union_mode,
                             n_pairs=n,
                             mean_abs_error=float(errors.mean()) if n else 0.0,
                             median_abs_error=float(np.median(errors)) if n else 0.0,
                             max_abs_error=float(errors.max()) if n else 0.0,
                             iou_seconds=seconds,
                             pairs_per_second=n / seconds if seconds > 0 else math.inf,
                             nms_seconds_per_image=nms_seconds,
                             timings=timings))
        logger.info('Mask %d: mean |error| %.4f, %.0f pairs/s', size,
                    rows[-1].mean_abs_error, rows[-1].pairs_per_second)
    return rows


def bench_metadata(spec):
    return {'mask_sizes': list(spec.mask_sizes),
            'n_pairs': spec.n_pairs,
            'repetitions': spec.repetitions,
            'warmup': spec.warmup,
            'size_range': list(spec.size_range),
            'image_size': [spec.image_w, spec.image_h],
            'union_mode': spec.union_mode,
            'threads': spec.threads,
            'identical_pairs': spec.identical_pairs,
            'seed': spec.seed,
            'mask_cache': MASK_CACHE_POLICY,
            'angle_decode': ANGLE_DECODE_RULE,
            'timing_scope': TIMING_SCOPE,
            'timing': 'median of repetitions, perf_counter wall clock, warmup excluded'}


def bench_table(rows, meta=None):
    """
    astropy Table of benchmark rows; per-repetition timings go in columns
    time_0 .. time_{R-1}.
    """
    tab = Table()
    tab['mask_size'] = np.array([r.mask_size for r in rows], dtype=int)
    tab['union_mode'] = np.array([r.union_mode for r in rows], dtype=str)
    tab['n_pairs'] = np.array([r.n_pairs for r in rows], dtype=int)
    for col in ('mean_abs_error', 'median_abs_error', 'max_abs_error', 'iou_seconds',
                'pairs_per_second', 'nms_seconds_per_image'):
        tab[col] = np.array([getattr(r, col) for r in rows], dtype=float)

    n_rep = max([len(r.timings) for r in rows], default=0)
    for i in range(n_rep):
        tab['time_{0:d}'.format(i)] = np.array([r.timings[i] if i < len(r.timings) else np.nan
                                                for r in rows], dtype=float)
    if meta:
        tab.meta.update(meta)
    return tab


def write_bench_table(rows, filename, meta=None):
    """Write the benchmark rows as comma-delimited ECSV with a metadata header."""
    tab = bench_table(rows, meta)
    tab.write(filename, format='ascii.ecsv', delimiter=',', overwrite=True)
    return tab


@dataclass
class PipelineResult:
    """
    Attributes
    ----------
    detections : list of list of Detection
        Kept detections per image.
    report : EvalReport
    timings : dict
        Stage wall times in seconds; empty unless timing was requested.
    """
    detections: list
    report: object
    timings: dict = field(default_factory=dict)


def run_pipeline(scenes, cfg, tensors=None, dets_by_image=None, timed=False):
    """
    Decode, filter, suppress and evaluate.

    Parameters
    ----------
    scenes : list of LabeledScene
        Ground truth, one per batch image.
    cfg : PipelineConfig
    tensors : list of numpy.ndarray, optional
        Head tensors; decoded with ``cfg.head`` at ``cfg.nms.conf_thresh``.
    dets_by_image : list of list of Detection, optional
        Used instead of tensors.
    timed : bool
        Record stage wall times. Results are the same either way.

    Returns
    -------
    result : PipelineResult
    """
    if (tensors is None) == (dets_by_image is None):
        raise ValueError('run_pipeline needs exactly one of tensors or dets_by_image.')

    timings = {}
    clock = time.perf_counter if timed else (lambda: 0.0)

    start = clock()
    if tensors is not None:
        n_b = np.shape(tensors[0])[0] if len(tensors) else 0
        if n_b == 0:
            dets_by_image = [[] for _ in scenes]
        else:
            dets_by_image = decode_batch(tensors, cfg.head, conf_thresh=cfg.nms.conf_thresh)
    if len(dets_by_image) != len(scenes):
        msg = 'Got detections for {0:d} images and labels for {1:d}.'
        raise ValueError(msg.format(len(dets_by_image), len(scenes)))
    after_decode = clock()

    kept = [run_nms(dets, cfg.nms) for dets in dets_by_image]
    after_nms = clock()

    report = evaluate(kept, [s.objects for s in scenes], cfg.eval)
    after_eval = clock()

    if timed:
        timings = {'decode': after_decode - start, 'nms': after_nms - after_decode,
                   'eval': after_eval - after_nms}
    return PipelineResult(kept, report, timings)
