from pathlib import Path
import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, field_validator
from pybadbox.constants import JPEG_QUALITY
from pybadbox.logs import get_logger

logger = get_logger(__name__)

JPEG_SUFFIXES = {'.jpg', '.jpeg'}


class ImageBuffer(BaseModel):
    """RGB pixels as a read-only (height, width, 3) uint8 array."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray

    @field_validator('data')
    @classmethod
    def rgb_uint8(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value)
        if value.ndim != 3 or value.shape[2] != 3:
            raise ValueError(f"Image data must have shape (height, width, 3), got {value.shape}")
        if value.dtype != np.uint8:
            if value.size and (value.min() < 0 or value.max() > 255):
                raise ValueError("Image intensities must lie in [0, 255]")
            value = value.astype(np.uint8)
        value = np.ascontiguousarray(value)
        value.flags.writeable = False
        return value

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return 3

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuffer) and np.array_equal(self.data, other.data)

    __hash__ = None


def read_image(path: Path) -> ImageBuffer:
    path = Path(path)
    try:
        with Image.open(path) as image:
            return ImageBuffer(data=np.asarray(image.convert('RGB')))
    except UnidentifiedImageError as e:
        logger.error("Unreadable image %s: %s", path, e)
        raise OSError(f"Unreadable image {path}: {e}") from e


def write_image(img: ImageBuffer, path: Path) -> None:
    """Write PNG losslessly; .jpg/.jpeg paths are re-encoded as JPEG at quality 95, which is lossy."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = Image.fromarray(np.array(img.data), mode='RGB')
    if path.suffix.lower() in JPEG_SUFFIXES:
        image.save(path, format='JPEG', quality=JPEG_QUALITY)
    else:
        image.save(path, format='PNG')
