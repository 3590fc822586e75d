"""royolo: rotated YOLO post-processing core."""

__version__ = '0.1'

from royolo.geometry import RotatedBox, HorizontalBox, canonicalize, iou_exact, iou_horizontal
from royolo.mask_raster import MaskConfig, iou_ro
from royolo.head_decode import HeadConfig, Detection, decode_batch
from royolo.nms import NmsConfig, nms, filter_conf
from royolo.eval_metrics import EvalConfig, evaluate
