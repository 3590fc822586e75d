"""
Pipeline configuration file.

One YAML document (JSON also parses) with up to seven sections::

    head:  {strides: [8, 16, 32], n_classes: 6, angle_granularity: 180, ...}
    mask:  {h_m: 550, w_m: 550, union_mode: corrected}
    nms:   {conf_thresh: 0.45, mode: rotated, class_aware: true}
    eval:  {backend: exact, agnostic_matching: false}
    loss:  {gamma_box: 0.05, xi: [4.0, 1.0, 0.4], angle_smoothing_radius: 0}
    scene: {n_objects: [1, 8], overlap_cap: 0.1, seed: 0}
    bench: {mask_sizes: [64, 128, 256, 550], n_pairs: 1000}

Missing sections and keys take the defaults of the matching dataclass. The
``mask`` section is shared by NMS and evaluation.
"""
import dataclasses
import logging

import yaml

from royolo.bench import BenchSpec
from royolo.eval_metrics import EvalConfig
from royolo.head_decode import HeadConfig
from royolo.loss import LossWeights
from royolo.mask_raster import MaskConfig
from royolo.nms import NmsConfig
from royolo.scene_synth import SceneSpec

logger = logging.getLogger(__name__)

SECTIONS = {'head': HeadConfig,
            'mask': MaskConfig,
            'nms': NmsConfig,
            'eval': EvalConfig,
            'loss': LossWeights,
            'scene': SceneSpec,
            'bench': BenchSpec}


class ConfigError(RuntimeError):
    """Unreadable, unknown or invalid configuration values."""
    pass


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    head: HeadConfig = dataclasses.field(default_factory=HeadConfig)
    mask: MaskConfig = dataclasses.field(default_factory=MaskConfig)
    nms: NmsConfig = dataclasses.field(default_factory=NmsConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    loss: LossWeights = dataclasses.field(default_factory=LossWeights)
    scene: SceneSpec = dataclasses.field(default_factory=SceneSpec)
    bench: BenchSpec = dataclasses.field(default_factory=BenchSpec)


def _build(name, values, **shared):
    cls = SECTIONS[name]
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError('Config section {0:s} must be a mapping, got {1!r}.'.format(name, values))

    known = {f.name for f in dataclasses.fields(cls)} - set(shared)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError('Unknown keys in config section {0:s}: {1}'.format(name, unknown))

    try:
        return cls(**values, **shared)
    except (TypeError, ValueError) as err:
        raise ConfigError('Invalid config section {0:s}: {1}'.format(name, err)) from err


def config_from_dict(doc):
    """Build a PipelineConfig from a parsed document; None gives the defaults."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError('A config document must be a mapping of sections.')
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError('Unknown config sections: {0}'.format(unknown))

    mask = _build('mask', doc.get('mask'))
    head = _build('head', doc.get('head'))
    mask = _check_mask_image(mask, head)
    return PipelineConfig(head=head,
                          mask=mask,
                          nms=_build('nms', doc.get('nms'), mask=mask),
                          eval=_build('eval', doc.get('eval'), mask=mask),
                          loss=_build('loss', doc.get('loss')),
                          scene=_build('scene', doc.get('scene')),
                          bench=_build('bench', doc.get('bench')))


def _check_mask_image(mask, head):
    if (mask.image_w, mask.image_h) != (head.image_w, head.image_h):
        logger.warning('Mask image size %dx%d differs from the head input %dx%d.',
                       mask.image_w, mask.image_h, head.image_w, head.image_h)
    return mask


def load_config(filename=None):
    """
    Read a YAML (or JSON) config file.

    Parameters
    ----------
    filename : str, optional
        None returns the defaults.

    Raises
    ------
    ConfigError
        Unreadable file, malformed document, unknown section or key, or a
        value rejected by its dataclass.
    """
    if filename is None:
        return PipelineConfig()
    try:
        with open(filename, 'r') as f:
            doc = yaml.safe_load(f)
    except OSError as err:
        raise ConfigError('Cannot read config file {0:s}: {1}'.format(str(filename), err)) from err
    except yaml.YAMLError as err:
        raise ConfigError('Cannot parse config file {0:s}: {1}'.format(str(filename), err)) from err
    return config_from_dict(doc)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg):
    """Plain nested dict (lists, floats, strings) of a PipelineConfig."""
    out = {}
    for name in SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        if name in ('nms', 'eval'):
            section.pop('mask', None)
        out[name] = _plain(section)
    return out


def write_config(cfg, filename):
    """Write a config so the same run can be re-initialised from it."""
    with open(filename, 'w') as f:
        yaml.dump(config_to_dict(cfg), f, default_flow_style=False, sort_keys=False)
    return


def override(cfg, section, **changes):
    """
    Copy of ``cfg`` with some keys of one section replaced.

    None values are ignored, so parsed command-line flags can be passed
    straight through.
    """
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg

    doc = config_to_dict(cfg)
    doc[section].update(_plain(changes))
    if section == 'nms' and 'mode' in changes and 'iou_thresh' not in changes:
        # let the threshold follow the new mode
        doc['nms'].pop('iou_thresh', None)
    return config_from_dict(doc)
