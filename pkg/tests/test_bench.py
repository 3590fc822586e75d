import numpy as np
import pytest
from astropy.table import Table

from royolo import bench, geometry, scene_synth
from royolo.bench import BenchSpec
from royolo.config import PipelineConfig
from royolo.head_decode import encode_targets
from royolo.scene_synth import SceneSpec

QUICK = dict(n_pairs=100, repetitions=1, warmup=0, nms_images=1, nms_dets=6)


def perfect_scenes(n_images=3, seed=0):
    # angles on the 180-bin centers decode without quantization error
    return scene_synth.generate(SceneSpec(angle_granularity=180, seed=seed), n_images)


def test_sample_box_pairs():
    pairs = bench.sample_box_pairs(200, seed=3)
    assert len(pairs) == 200
    for a, b in pairs:
        for box in (a, b):
            quad = geometry.corners(box)
            assert np.all(quad >= -1e-9) and np.all(quad <= 640 + 1e-9)
            assert 32.0 <= box.w <= 200.0 and 32.0 <= box.h <= 200.0

    assert bench.sample_box_pairs(5, seed=3) == pairs[:5]

    same = bench.sample_box_pairs(10, seed=3, identical=True)
    assert all(a == b for a, b in same)

    return


def test_bench_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec(mask_sizes=(550, 64))
    with pytest.raises(ValueError):
        BenchSpec(mask_sizes=())
    with pytest.raises(ValueError):
        BenchSpec(repetitions=0)
    with pytest.raises(ValueError):
        BenchSpec(union_mode='paper')

    return


def test_identity_pairs_have_no_error():
    for union in ('corrected', 'paper_literal'):
        spec = BenchSpec(mask_sizes=(128,), identical_pairs=True, union_mode=union, **QUICK)
        row, = bench.bench_iou(spec)
        assert row.max_abs_error <= 1e-12
        assert row.n_pairs == 100

    return


def test_error_refines_with_mask_size():
    spec = BenchSpec(mask_sizes=(64, 550), **QUICK)
    coarse, fine = bench.bench_iou(spec, with_nms=False)
    assert fine.mean_abs_error <= coarse.mean_abs_error
    assert np.isnan(fine.nms_seconds_per_image)

    return


def test_throughput_falls_with_mask_area():
    spec = BenchSpec(mask_sizes=(64, 550), n_pairs=100, repetitions=3, warmup=1,
                     nms_images=1, nms_dets=6)
    coarse, fine = bench.bench_iou(spec, with_nms=False)

    # 74x the cells; only ask for a clear slowdown
    assert fine.iou_seconds > 1.5 * coarse.iou_seconds
    assert fine.pairs_per_second < coarse.pairs_per_second

    return


def test_repetitions():
    spec = BenchSpec(mask_sizes=(64, 128), n_pairs=50, repetitions=3, warmup=1,
                     nms_images=1, nms_dets=4)
    first = bench.bench_iou(spec)
    second = bench.bench_iou(spec)

    for row_a, row_b in zip(first, second):
        assert len(row_a.timings) == 3
        assert row_a.mean_abs_error == row_b.mean_abs_error
        assert row_a.max_abs_error == row_b.max_abs_error
        assert row_a.iou_seconds > 0
        assert row_a.nms_seconds_per_image >= 0

    return


def test_time_call():
    calls = []
    timings = bench.time_call(lambda: calls.append(1), repetitions=4, warmup=2)
    assert len(timings) == 4
    assert len(calls) == 6
    assert all(t >= 0 for t in timings)

    return


def test_bench_table(tmp_path):
    spec = BenchSpec(mask_sizes=(64, 128), repetitions=2, **{k: v for k, v in QUICK.items()
                                                               if k != 'repetitions'})
    rows = bench.bench_iou(spec)
    path = tmp_path / 'bench.csv'
    bench.write_bench_table(rows, str(path), bench.bench_metadata(spec))

    tab = Table.read(str(path), format='ascii.ecsv')
    assert tab['mask_size'].tolist() == [64, 128]
    for col in ('union_mode', 'mean_abs_error', 'median_abs_error', 'max_abs_error',
                'pairs_per_second', 'nms_seconds_per_image', 'time_0', 'time_1'):
        assert col in tab.colnames
    assert tab.meta['seed'] == 0
    assert tab.meta['mask_sizes'] == [64, 128]
    assert 'timing_scope' in tab.meta

    return


def test_pipeline_perfect_tensors():
    cfg = PipelineConfig()
    scenes = perfect_scenes()
    tensors = encode_targets([s.targets for s in scenes], cfg.head)

    result = bench.run_pipeline(scenes, cfg, tensors=tensors, timed=True)
    assert [len(d) for d in result.detections] == [len(s.objects) for s in scenes]
    assert result.report.map == pytest.approx(1.0)
    assert result.report.ap95 == pytest.approx(1.0)
    assert result.report.precision == pytest.approx(1.0)
    assert result.report.recall == pytest.approx(1.0)
    assert result.report.f1 == pytest.approx(1.0)
    assert set(result.timings) == {'decode', 'nms', 'eval'}

    return


def test_pipeline_empty_inputs():
    cfg = PipelineConfig()
    empty = [np.zeros(cfg.head.tensor_shape(s, n_b=0)) for s in range(cfg.head.n_scales)]
    result = bench.run_pipeline([], cfg, tensors=empty)
    assert result.detections == []
    assert result.report.map == 0.0
    assert result.report.recall == 0.0

    scenes = perfect_scenes(n_images=2)
    silent = encode_targets([[] for _ in scenes], cfg.head)
    result = bench.run_pipeline(scenes, cfg, tensors=silent)
    assert result.detections == [[], []]
    assert result.report.map == 0.0
    assert result.report.recall == 0.0

    return


def test_pipeline_wrong_angles():
    cfg = PipelineConfig()
    scenes = perfect_scenes(seed=1)
    tensors = encode_targets([s.targets for s in scenes], cfg.head, angle_shift=10)

    report = bench.run_pipeline(scenes, cfg, tensors=tensors).report
    assert report.ap95 < 1.0
    assert report.map < 1.0

    return


def test_pipeline_arguments():
    cfg = PipelineConfig()
    with pytest.raises(ValueError):
        bench.run_pipeline([], cfg)
    with pytest.raises(ValueError):
        bench.run_pipeline(perfect_scenes(n_images=1), cfg, dets_by_image=[[], []])

    return
