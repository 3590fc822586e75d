"""
Label, detection and tensor files.

Labels are JSON lines, one image per line::

    {"image_id": "scene_000000", "width": 640, "height": 640,
     "objects": [{"x": .., "y": .., "w": .., "h": .., "theta": .., "class": 0}]}

Detections are one JSON document, a list of per-image entries::

    [{"image_id": "scene_000000",
      "detections": [{"x": .., "y": .., "w": .., "h": .., "theta": ..,
                      "class": 0, "confidence": 0.93,
                      "scale": 0, "batch": 0, "anchor": 1, "row": 4, "col": 7}]}]

Head tensors are a numpy ``.npz`` archive with arrays ``scale0`` ..
``scale{S-1}``, ``strides``, ``n_classes``, ``angle_granularity`` and
``image_ids``.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from royolo.geometry import canonicalize
from royolo.head_decode import Detection

logger = logging.getLogger(__name__)

BOX_KEYS = ('x', 'y', 'w', 'h', 'theta')


class SceneObject(NamedTuple):
    box: object
    class_id: int


class LabelRecord(dict):
    """
    One line of a label file.

    The record must be instantiated with a dictionary containing

        image_id
        width
        height

    and an optional ``objects`` list of box dictionaries, which defaults to
    an empty list.
    """

    def __init__(self, val=None):
        if ((val is None) or ('image_id' not in val) or
                ('width' not in val) or ('height' not in val)):
            msg = 'LabelRecord must be instantiated with a dictionary containing image_id, width, and height.'
            raise ValueError(msg)

        super().__init__(val)

        if 'objects' not in self:
            self['objects'] = []

        return


@dataclass
class LabeledScene:
    """
    Ground truth of one image.

    Attributes
    ----------
    image_id : str
    width, height : int
        Image size in pixels.
    objects : list of SceneObject
        Canonical rotated boxes with class ids.
    raster : numpy.ndarray or None
        Optional (height, width, 3) float image.
    """
    image_id: str
    width: int = 640
    height: int = 640
    objects: list = field(default_factory=list)
    raster: np.ndarray = None

    @property
    def targets(self):
        """(box, class_id) pairs, the per-image entry of a target set."""
        return [(obj.box, obj.class_id) for obj in self.objects]

    def to_record(self):
        objects = [_box_record(obj.box, {'class': int(obj.class_id)}) for obj in self.objects]
        return LabelRecord({'image_id': self.image_id, 'width': int(self.width),
                            'height': int(self.height), 'objects': objects})

    @classmethod
    def from_record(cls, record):
        record = LabelRecord(record)
        objects = [SceneObject(_record_box(o), _record_class(o)) for o in record['objects']]
        return cls(str(record['image_id']), int(record['width']), int(record['height']), objects)


def _box_record(box, extra):
    out = {'x': float(box.x), 'y': float(box.y), 'w': float(box.w), 'h': float(box.h),
           'theta': float(getattr(box, 'theta', 0.0))}
    out.update(extra)
    return out


def _record_box(obj):
    missing = [k for k in BOX_KEYS[:4] if k not in obj]
    if missing:
        raise ValueError('Box record is missing {0}: {1}'.format(missing, obj))
    return canonicalize(float(obj['x']), float(obj['y']), float(obj['w']), float(obj['h']),
                        float(obj.get('theta', 0.0)))


def _record_class(obj):
    if 'class' not in obj:
        raise ValueError('Box record is missing its class: {0}'.format(obj))
    class_id = int(obj['class'])
    if class_id < 0:
        raise ValueError('Class ids must be non-negative, got {0:d}.'.format(class_id))
    return class_id


def write_labels(scenes, filename):
    """Write scenes as JSON lines."""
    with open(filename, 'w') as f:
        for scene in scenes:
            f.write(json.dumps(scene.to_record()) + '\n')
    return


def read_labels(filename):
    """
    Read a JSON-lines label file.

    Returns
    -------
    scenes : list of LabeledScene
    """
    scenes = []
    with open(filename, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(LabeledScene.from_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as err:
                msg = 'Bad label record on line {0:d} of {1:s}: {2}'
                raise ValueError(msg.format(lineno, str(filename), err)) from err
    return scenes


def detection_records(dets_by_image, image_ids):
    if len(dets_by_image) != len(image_ids):
        msg = 'Got {0:d} detection lists for {1:d} image ids.'
        raise ValueError(msg.format(len(dets_by_image), len(image_ids)))

    out = []
    for image_id, dets in zip(image_ids, dets_by_image):
        recs = [_box_record(d.box, {'class': int(d.class_id), 'confidence': float(d.confidence),
                                    'scale': int(d.scale), 'batch': int(d.batch),
                                    'anchor': int(d.anchor), 'row': int(d.row), 'col': int(d.col)})
                for d in dets]
        out.append({'image_id': str(image_id), 'detections': recs})
    return out


def write_detections(filename, dets_by_image, image_ids):
    with open(filename, 'w') as f:
        json.dump(detection_records(dets_by_image, image_ids), f, indent=1)
    return


def parse_detections(doc):
    """
    Detections from a parsed detections document.

    Returns
    -------
    image_ids : list of str
    dets_by_image : list of list of Detection
    """
    if not isinstance(doc, list):
        raise ValueError('A detections document must be a list of per-image entries.')

    image_ids = []
    dets_by_image = []
    for entry in doc:
        image_ids.append(str(entry['image_id']))
        dets = []
        for rec in entry.get('detections', []):
            conf = float(rec['confidence'])
            if not (0.0 <= conf <= 1.0):
                raise ValueError('Confidence {0} is outside [0, 1].'.format(conf))
            dets.append(Detection(box=_record_box(rec), class_id=_record_class(rec),
                                  confidence=conf,
                                  scale=int(rec.get('scale', -1)), batch=int(rec.get('batch', -1)),
                                  anchor=int(rec.get('anchor', -1)), row=int(rec.get('row', -1)),
                                  col=int(rec.get('col', -1))))
        dets_by_image.append(dets)
    return image_ids, dets_by_image


def read_detections(filename):
    with open(filename, 'r') as f:
        doc = json.load(f)
    return parse_detections(doc)


def align_detections(image_ids, dets_by_image, scenes):
    """
    Reorder detection lists to follow the order of ``scenes``.

    Images without detections get an empty list; detections for an image id
    that has no label are an error.
    """
    by_id = {}
    for image_id, dets in zip(image_ids, dets_by_image):
        by_id.setdefault(image_id, []).extend(dets)

    known = {s.image_id for s in scenes}
    unknown = sorted(set(by_id) - known)
    if unknown:
        raise ValueError('Detections reference unlabeled images: {0}'.format(unknown))

    return [by_id.get(s.image_id, []) for s in scenes]


def write_tensors(filename, tensors, cfg, image_ids=None):
    """Save per-scale head tensors with the head metadata needed to decode them."""
    arrays = {'scale{0:d}'.format(i): np.asarray(t, dtype=float) for i, t in enumerate(tensors)}
    n_b = arrays['scale0'].shape[0] if arrays else 0
    if image_ids is None:
        image_ids = ['{0:06d}'.format(i) for i in range(n_b)]
    arrays['strides'] = np.asarray(cfg.strides, dtype=int)
    arrays['n_classes'] = np.asarray(cfg.n_classes, dtype=int)
    arrays['angle_granularity'] = np.asarray(cfg.angle_granularity, dtype=int)
    arrays['image_ids'] = np.asarray(image_ids, dtype=str)
    np.savez(filename, **arrays)
    return


def read_tensors(filename):
    """
    Load a tensor archive written by :func:`write_tensors`.

    Returns
    -------
    tensors : list of numpy.ndarray
    meta : dict
        strides (tuple), n_classes (int), angle_granularity (int) and
        image_ids (list of str).
    """
    with np.load(filename, allow_pickle=False) as npz:
        keys = set(npz.files)
        for key in ('strides', 'n_classes', 'angle_granularity', 'image_ids'):
            if key not in keys:
                raise ValueError('Tensor archive {0:s} is missing {1:s}.'.format(str(filename), key))
        strides = tuple(int(s) for s in npz['strides'])
        tensors = []
        for i in range(len(strides)):
            key = 'scale{0:d}'.format(i)
            if key not in keys:
                raise ValueError('Tensor archive {0:s} is missing {1:s}.'.format(str(filename), key))
            tensors.append(np.array(npz[key], dtype=float))
        meta = {'strides': strides,
                'n_classes': int(npz['n_classes']),
                'angle_granularity': int(npz['angle_granularity']),
                'image_ids': [str(s) for s in npz['image_ids']]}
    return tensors, meta
