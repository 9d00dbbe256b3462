import numpy as np
from pydantic import BaseModel, ConfigDict
from pybadbox.data.models import BBox
from pybadbox.logs import get_logger
from pybadbox.trigger.image_io import ImageBuffer
from pybadbox.trigger.patterns import TriggerSpec
from pybadbox.utils import round_half_up

logger = get_logger(__name__)


class BlendResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    image: ImageBuffer
    region: tuple[int, int, int, int] | None = None
    skipped: bool = False


def rasterize(region: BBox) -> tuple[int, int, int, int]:
    """Pixel rectangle (x0, y0, x1, y1), end-exclusive, of a real-valued region. At least 1x1."""
    x0 = round_half_up(region.x)
    y0 = round_half_up(region.y)
    return x0, y0, x0 + max(1, round_half_up(region.w)), y0 + max(1, round_half_up(region.h))


def trigger_region(bbox: BBox, spec: TriggerSpec) -> BBox:
    """
    Patch rectangle for a target box: relative_size of the box extent, at least
    one pixel per side, centered on the box center.
    """
    patch_w = max(1, round_half_up(spec.relative_size[0] * bbox.w))
    patch_h = max(1, round_half_up(spec.relative_size[1] * bbox.h))
    center_x = bbox.x + bbox.w / 2
    center_y = bbox.y + bbox.h / 2
    return BBox(x=round_half_up(center_x - patch_w / 2), y=round_half_up(center_y - patch_h / 2), w=patch_w, h=patch_h)


def _nearest_indices(target: int, base: int) -> np.ndarray:
    return np.minimum(((np.arange(target) + 0.5) * base / target).astype(np.int64), base - 1)


def resample(array: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of a (h, w, c) array."""
    rows = _nearest_indices(height, array.shape[0])
    cols = _nearest_indices(width, array.shape[1])
    return array[rows][:, cols]


def blend_region(img: ImageBuffer, spec: TriggerSpec, region: BBox) -> BlendResult:
    """
    Blend the trigger into region: every covered pixel becomes
    floor(λ·t + (1 − λ)·x + 0.5). The trigger is resampled to the unclipped
    rasterized region, then cropped to the image. A region entirely outside
    the image leaves it untouched and sets skipped.
    """
    x0, y0, x1, y1 = rasterize(region)
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, img.width), min(y1, img.height)
    if cx0 >= cx1 or cy0 >= cy1:
        logger.warning("Trigger region %s lies outside the %sx%s image, not stamped",
                       (x0, y0, x1, y1), img.width, img.height)
        return BlendResult(image=img, region=None, skipped=True)

    pattern = resample(spec.pattern, y1 - y0, x1 - x0)[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0].astype(np.float64)
    lam = resample(spec.transparency, y1 - y0, x1 - x0)[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]

    out = np.array(img.data)
    current = out[cy0:cy1, cx0:cx1].astype(np.float64)
    blended = np.floor(lam * pattern + (1.0 - lam) * current + 0.5)
    out[cy0:cy1, cx0:cx1] = np.clip(blended, 0, 255).astype(np.uint8)
    return BlendResult(image=ImageBuffer(data=out), region=(cx0, cy0, cx1, cy1))


def stamp_box(img: ImageBuffer, spec: TriggerSpec, bbox: BBox) -> BlendResult:
    return blend_region(img, spec, trigger_region(bbox, spec))
