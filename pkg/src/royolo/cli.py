"""
Command line front end.

    royolo gen       synthetic labels (+ PNG rasters)
    royolo decode    head tensors -> detections JSON
    royolo loss      head tensors + labels -> loss report JSON
    royolo nms       detections JSON -> kept detections JSON
    royolo eval      detections + labels -> evaluation report JSON (+ PR CSVs)
    royolo iou       one box pair -> exact, masked and horizontal IoU
    royolo bench     mask-size benchmark -> ECSV table
    royolo pipeline  tensors + labels -> kept detections + report
    royolo anchors   labels -> k-means anchors

Every command takes ``--config`` (YAML or JSON); flags override file values.
Exit codes: 0 success, 1 input error, 2 config error.
"""
import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from royolo import bench, data, geometry, head_decode, scene_synth
from royolo.config import ConfigError, load_config, override, write_config
from royolo.eval_metrics import evaluate, write_pr_curves
from royolo.loss import compute_loss
from royolo.mask_raster import iou_ro
from royolo.nms import run_nms

logger = logging.getLogger('royolo')

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2

UNION_FLAGS = {'corrected': 'corrected', 'paper': 'paper_literal'}
MODE_FLAGS = {'h': 'horizontal', 'horizontal': 'horizontal', 'ro': 'rotated', 'rotated': 'rotated'}


def _emit(doc, filename=None):
    text = json.dumps(doc, indent=1)
    if filename is None:
        print(text)
    else:
        with open(filename, 'w') as f:
            f.write(text + '\n')
    return


def _mask_overrides(cfg, args):
    union = UNION_FLAGS[args.union] if getattr(args, 'union', None) else None
    size = getattr(args, 'mask_size', None)
    return override(cfg, 'mask', h_m=size, w_m=size, union_mode=union)


def _head_for_tensors(cfg, meta):
    """Head config with the tensor archive's strides, classes and bins."""
    head = cfg.head
    changes = {}
    if tuple(meta['strides']) != head.strides:
        changes['strides'] = tuple(meta['strides'])
    if meta['n_classes'] != head.n_classes:
        changes['n_classes'] = meta['n_classes']
    if meta['angle_granularity'] != head.angle_granularity:
        changes['angle_granularity'] = meta['angle_granularity']
    if changes:
        logger.warning('Tensor file overrides head settings: %s', changes)
        head = dataclasses.replace(head, **changes)
    return head


def cmd_gen(args, cfg):
    cfg = override(cfg, 'scene', seed=args.seed, overlap_cap=args.overlap_cap,
                   angle_granularity=args.angle_granularity)
    scenes = scene_synth.generate(cfg.scene, args.n_images, n_jobs=args.threads)
    data.write_labels(scenes, args.out)
    print('Wrote {0:d} scenes to {1:s}'.format(len(scenes), args.out))
    if args.rasters:
        paths = scene_synth.write_rasters(scenes, args.rasters, seed=cfg.scene.seed)
        print('Wrote {0:d} rasters to {1:s}'.format(len(paths), args.rasters))
    return cfg


def cmd_decode(args, cfg):
    tensors, meta = data.read_tensors(args.tensors)
    head = _head_for_tensors(cfg, meta)
    conf = args.conf_thresh if args.conf_thresh is not None else cfg.nms.conf_thresh
    dets = head_decode.decode_batch(tensors, head, conf_thresh=conf)
    data.write_detections(args.out, dets, meta['image_ids'])
    print('Decoded {0:d} detections from {1:d} images'.format(sum(len(d) for d in dets), len(dets)))
    return cfg


def cmd_loss(args, cfg):
    tensors, meta = data.read_tensors(args.tensors)
    head = _head_for_tensors(cfg, meta)
    scenes = data.read_labels(args.labels)
    by_id = {s.image_id: s for s in scenes}
    missing = [i for i in meta['image_ids'] if i not in by_id]
    if missing:
        raise ValueError('No labels for tensor images {0}'.format(missing))
    ts = [by_id[i].targets for i in meta['image_ids']]
    report = compute_loss(tensors, ts, head, cfg.loss)
    _emit(report.to_dict(), args.out)
    return cfg


def cmd_nms(args, cfg):
    cfg = _mask_overrides(cfg, args)
    mode = MODE_FLAGS[args.mode] if args.mode else None
    class_aware = False if args.class_agnostic else None
    cfg = override(cfg, 'nms', mode=mode, iou_thresh=args.iou_thresh,
                   conf_thresh=args.conf_thresh, rotated_backend=args.backend,
                   class_aware=class_aware, max_det=args.max_det)
    image_ids, dets_by_image = data.read_detections(args.dets)
    kept = [run_nms(dets, cfg.nms) for dets in dets_by_image]
    data.write_detections(args.out, kept, image_ids)
    print('Kept {0:d} of {1:d} detections'.format(sum(len(k) for k in kept),
                                                  sum(len(d) for d in dets_by_image)))
    return cfg


def _eval_backend(args, cfg):
    if args.mode and MODE_FLAGS[args.mode] == 'horizontal':
        return 'horizontal'
    return args.backend


def cmd_eval(args, cfg):
    cfg = _mask_overrides(cfg, args)
    cfg = override(cfg, 'eval', backend=_eval_backend(args, cfg),
                   agnostic_matching=True if args.agnostic else None)
    image_ids, dets_by_image = data.read_detections(args.dets)
    scenes = data.read_labels(args.gt)
    aligned = data.align_detections(image_ids, dets_by_image, scenes)
    report = evaluate(aligned, [s.objects for s in scenes], cfg.eval)
    _emit(report.to_dict(), args.out)
    if args.pr_dir:
        write_pr_curves(report, args.pr_dir)
    return cfg


def _parse_box(values):
    if len(values) not in (4, 5):
        raise ValueError('A box takes 4 or 5 values (x y w h [theta]), got {0:d}.'.format(len(values)))
    x, y, w, h = values[:4]
    theta = values[4] if len(values) > 4 else 0.0
    return geometry.canonicalize(x, y, w, h, theta)


def cmd_iou(args, cfg):
    cfg = _mask_overrides(cfg, args)
    a = _parse_box(args.box_a)
    b = _parse_box(args.box_b)
    doc = {'box_a': list(a), 'box_b': list(b),
           'exact': geometry.iou_exact(a, b),
           'masked': iou_ro(a, b, cfg.mask),
           'horizontal': geometry.iou_horizontal(a, b),
           'mask_size': [cfg.mask.h_m, cfg.mask.w_m],
           'union_mode': cfg.mask.union_mode}
    _emit(doc, args.out)
    return cfg


def cmd_bench(args, cfg):
    union = UNION_FLAGS[args.union] if args.union else None
    cfg = override(cfg, 'bench', mask_sizes=args.sizes, n_pairs=args.pairs,
                   repetitions=args.repetitions, warmup=args.warmup,
                   threads=args.threads, union_mode=union, seed=args.seed)
    rows = bench.bench_iou(cfg.bench, with_nms=not args.no_nms)
    bench.write_bench_table(rows, args.out, bench.bench_metadata(cfg.bench))
    for row in rows:
        print('mask {0:4d}  mean |err| {1:.4f}  median |err| {2:.4f}  {3:10.0f} pairs/s'.format(
            row.mask_size, row.mean_abs_error, row.median_abs_error, row.pairs_per_second))
    return cfg


def cmd_pipeline(args, cfg):
    cfg = _mask_overrides(cfg, args)
    tensors, meta = data.read_tensors(args.tensors)
    cfg = dataclasses.replace(cfg, head=_head_for_tensors(cfg, meta))
    scenes = data.read_labels(args.labels)
    by_id = {s.image_id: s for s in scenes}
    missing = [i for i in meta['image_ids'] if i not in by_id]
    if missing:
        raise ValueError('No labels for tensor images {0}'.format(missing))
    ordered = [by_id[i] for i in meta['image_ids']]

    result = bench.run_pipeline(ordered, cfg, tensors=tensors)
    if args.out_dets:
        data.write_detections(args.out_dets, result.detections, meta['image_ids'])
    _emit(result.report.to_dict(), args.out)
    return cfg


def cmd_anchors(args, cfg):
    scenes = data.read_labels(args.labels)
    wh = np.array([[o.box.w, o.box.h] for s in scenes for o in s.objects]).reshape(-1, 2)
    anchors = head_decode.kmeans_anchors(wh, args.n_scales, args.n_per_scale, seed=args.seed)
    _emit({'anchors': [[list(a) for a in scale] for scale in anchors]}, args.out)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog='royolo',
                                     description='Rotated YOLO post-processing: decode, NMS, IoU and evaluation.',
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--config', default=None, help='YAML or JSON config file')
    parser.add_argument('--save-config', default=None,
                        help='write the effective config (after flag overrides) to this file')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def mask_flags(p):
        p.add_argument('--union', choices=sorted(UNION_FLAGS), default=None)
        p.add_argument('--mask-size', type=int, default=None, help='square mask size in cells')

    p = sub.add_parser('gen', help='generate synthetic labeled scenes')
    p.add_argument('--n-images', type=int, default=10)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--overlap-cap', type=float, default=None)
    p.add_argument('--angle-granularity', type=int, default=None,
                   help='snap angles to this many bin centers')
    p.add_argument('--threads', type=int, default=1)
    p.add_argument('--rasters', default=None, help='directory for PNG rasters')
    p.add_argument('--out', required=True, help='output JSON-lines label file')
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser('decode', help='decode head tensors into detections')
    p.add_argument('--tensors', required=True, help='.npz tensor archive')
    p.add_argument('--conf-thresh', type=float, default=None)
    p.add_argument('--out', required=True, help='output detections JSON')
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser('loss', help='forward loss of head tensors against labels')
    p.add_argument('--tensors', required=True)
    p.add_argument('--labels', required=True)
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser('nms', help='confidence filter and non-maximum suppression')
    p.add_argument('--dets', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--mode', choices=sorted(MODE_FLAGS), default=None)
    p.add_argument('--iou-thresh', type=float, default=None)
    p.add_argument('--conf-thresh', type=float, default=None)
    p.add_argument('--backend', choices=('masked', 'exact'), default=None)
    p.add_argument('--class-agnostic', action='store_true')
    p.add_argument('--max-det', type=int, default=None)
    mask_flags(p)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser('eval', help='AP, mAP, precision, recall and F1')
    p.add_argument('--dets', required=True)
    p.add_argument('--gt', required=True, help='JSON-lines labels')
    p.add_argument('--mode', choices=sorted(MODE_FLAGS), default=None)
    p.add_argument('--backend', choices=('exact', 'masked', 'horizontal'), default=None)
    p.add_argument('--agnostic', action='store_true', help='class-agnostic matching')
    p.add_argument('--out', default=None)
    p.add_argument('--pr-dir', default=None, help='directory for per-class PR curve CSVs')
    mask_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('iou', help='IoU of one box pair')
    p.add_argument('--box-a', type=float, nargs='+', required=True, metavar='V',
                   help='x y w h [theta]')
    p.add_argument('--box-b', type=float, nargs='+', required=True, metavar='V')
    p.add_argument('--out', default=None)
    mask_flags(p)
    p.set_defaults(func=cmd_iou)

    p = sub.add_parser('bench', help='masked IoU accuracy and speed across mask sizes')
    p.add_argument('--sizes', type=int, nargs='+', default=None)
    p.add_argument('--pairs', type=int, default=None)
    p.add_argument('--repetitions', type=int, default=None)
    p.add_argument('--warmup', type=int, default=None)
    p.add_argument('--threads', type=int, default=None)
    p.add_argument('--union', choices=sorted(UNION_FLAGS), default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--no-nms', action='store_true', help='skip the NMS timing')
    p.add_argument('--out', required=True, help='output ECSV/CSV table')
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser('pipeline', help='decode, NMS and evaluate in one go')
    p.add_argument('--tensors', required=True)
    p.add_argument('--labels', required=True)
    p.add_argument('--out-dets', default=None)
    p.add_argument('--out', default=None, help='report JSON')
    mask_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser('anchors', help='k-means anchors from a label file')
    p.add_argument('--labels', required=True)
    p.add_argument('--n-scales', type=int, default=3)
    p.add_argument('--n-per-scale', type=int, default=3)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_anchors)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')

    try:
        cfg = load_config(args.config)
        cfg = args.func(args, cfg)
        if args.save_config:
            write_config(cfg, args.save_config)
    except ConfigError as err:
        print('config error: {0}'.format(err), file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError, KeyError, RuntimeError) as err:
        print('input error: {0}'.format(err), file=sys.stderr)
        return EXIT_INPUT

    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
