from pathlib import Path
from typing import Literal
import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from pybadbox.constants import BUILTIN_PATTERNS, DEFAULT_TRIGGER_SIZE, PATTERN_BASE_SIZE
from pybadbox.exceptions import TriggerError
from pybadbox.logs import get_logger
from pybadbox.utils import format_number, sha256_hex

logger = get_logger(__name__)


class TriggerSpec(BaseModel):
    """
    A trigger: pattern pixels t, per-pixel per-channel transparency λ and the
    rule sizing the stamped patch relative to the target box.

    The patch is placed at the box center and measures relative_size[0] of the
    box width by relative_size[1] of its height.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = 'custom'
    pattern: np.ndarray
    transparency: np.ndarray
    relative_size: tuple[float, float] = DEFAULT_TRIGGER_SIZE
    placement: Literal['center'] = 'center'

    @field_validator('pattern')
    @classmethod
    def pattern_rgb(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value)
        if value.ndim != 3 or value.shape[2] != 3 or value.shape[0] == 0 or value.shape[1] == 0:
            raise ValueError(f"Trigger pattern must have shape (height, width, 3), got {value.shape}")
        if value.min() < 0 or value.max() > 255:
            raise ValueError("Trigger pattern intensities must lie in [0, 255]")
        value = np.ascontiguousarray(value, dtype=np.uint8)
        value.flags.writeable = False
        return value

    @field_validator('transparency')
    @classmethod
    def transparency_unit(cls, value: np.ndarray) -> np.ndarray:
        value = np.ascontiguousarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)) or value.min() < 0.0 or value.max() > 1.0:
            raise ValueError("Trigger transparency values must lie in [0, 1]")
        value.flags.writeable = False
        return value

    @field_validator('relative_size')
    @classmethod
    def size_fractions(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not all(0.0 < fraction <= 1.0 for fraction in value):
            raise ValueError(f"Trigger relative size fractions must lie in (0, 1], got {value}")
        return value

    @model_validator(mode='after')
    def same_shape(self) -> 'TriggerSpec':
        if self.pattern.shape != self.transparency.shape:
            raise ValueError(f"Pattern {self.pattern.shape} and transparency {self.transparency.shape} differ in shape")
        return self

    def digest(self) -> str:
        header = f"{self.placement}:{format_number(self.relative_size[0])}:{format_number(self.relative_size[1])}:{self.pattern.shape}"
        return sha256_hex(header.encode('utf-8') + self.pattern.tobytes() + self.transparency.tobytes())

    def scaled(self, relative_size: tuple[float, float]) -> 'TriggerSpec':
        return TriggerSpec(name=self.name, pattern=self.pattern, transparency=self.transparency,
                           relative_size=relative_size, placement=self.placement)

    def describe(self) -> dict:
        return {
            'name': self.name,
            'base_size': [int(self.pattern.shape[1]), int(self.pattern.shape[0])],
            'relative_size': list(self.relative_size),
            'placement': self.placement,
            'digest': self.digest(),
        }

    def __eq__(self, other) -> bool:
        return (isinstance(other, TriggerSpec)
                and self.relative_size == other.relative_size
                and self.placement == other.placement
                and np.array_equal(self.pattern, other.pattern)
                and np.array_equal(self.transparency, other.transparency))

    __hash__ = None


def _opaque(pattern: np.ndarray, name: str, relative_size: tuple[float, float]) -> TriggerSpec:
    return TriggerSpec(name=name, pattern=pattern, transparency=np.ones(pattern.shape), relative_size=relative_size)


def builtin_pattern(name: str, seed: int | None = None, size: int = PATTERN_BASE_SIZE,
                    relative_size: tuple[float, float] = DEFAULT_TRIGGER_SIZE) -> TriggerSpec:
    """
    Build one of the opaque builtin triggers.

    white is the patch of the main experiments. black, checkerboard and noise
    stand in for the other patterns of the trigger ablation, whose pixels were
    never published. noise is a uniform random field and needs a seed.
    """
    shape = (size, size, 3)
    if name == 'white':
        return _opaque(np.full(shape, 255, dtype=np.uint8), name, relative_size)
    if name == 'black':
        return _opaque(np.zeros(shape, dtype=np.uint8), name, relative_size)
    if name == 'checkerboard':
        rows, cols = np.indices((size, size))
        cells = np.where((rows + cols) % 2 == 0, 0, 255).astype(np.uint8)
        return _opaque(np.repeat(cells[:, :, None], 3, axis=2), name, relative_size)
    if name == 'noise':
        if seed is None:
            raise TriggerError("The noise trigger requires a seed")
        rng = np.random.default_rng(seed)
        return _opaque(rng.integers(0, 256, size=shape, dtype=np.uint8), f"noise-{seed}", relative_size)
    raise TriggerError(f"Unknown builtin trigger '{name}'. Choose one of {', '.join(BUILTIN_PATTERNS)}")


def load_pattern(path: Path, relative_size: tuple[float, float] = DEFAULT_TRIGGER_SIZE) -> TriggerSpec:
    """
    Read a trigger from a PNG file. RGB becomes the pattern and alpha / 255 the
    transparency (1 when there is no alpha). Grayscale files are replicated
    across the three channels.
    """
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.format != 'PNG':
                raise TriggerError(f"Trigger pattern {path} is {image.format}, not PNG")
            rgb, alpha = _split_alpha(image)
    except (OSError, UnidentifiedImageError) as e:
        logger.error("Unable to read trigger pattern %s: %s", path, e)
        raise TriggerError(f"Unable to read trigger pattern {path}: {e}") from e
    transparency = np.repeat((alpha.astype(np.float64) / 255.0)[:, :, None], 3, axis=2)
    return TriggerSpec(name=path.stem, pattern=rgb, transparency=transparency, relative_size=relative_size)


def _split_alpha(image: Image.Image) -> tuple[np.ndarray, np.ndarray]:
    mode = image.mode
    if mode == 'P':
        image = image.convert('RGBA' if 'transparency' in image.info else 'RGB')
        mode = image.mode
    if mode == 'LA':
        gray, alpha = (np.asarray(band) for band in image.split())
        return np.repeat(gray[:, :, None], 3, axis=2), alpha
    if mode in ('1', 'L', 'I', 'I;16', 'F'):
        gray = np.asarray(image.convert('L'))
        return np.repeat(gray[:, :, None], 3, axis=2), np.full(gray.shape, 255, dtype=np.uint8)
    if mode != 'RGBA':
        image = image.convert('RGBA') if 'A' in mode or 'transparency' in image.info else image.convert('RGB')
    data = np.asarray(image)
    if data.shape[2] == 4:
        return data[:, :, :3], data[:, :, 3]
    return data, np.full(data.shape[:2], 255, dtype=np.uint8)


def resolve_trigger(name: str, seed: int | None = None,
                    relative_size: tuple[float, float] = DEFAULT_TRIGGER_SIZE) -> TriggerSpec:
    """A builtin trigger by name, or the PNG pattern at that path."""
    if name in BUILTIN_PATTERNS:
        return builtin_pattern(name, seed=seed, relative_size=relative_size)
    path = Path(name)
    if path.suffix.lower() == '.png' or path.exists():
        return load_pattern(path, relative_size=relative_size)
    raise TriggerError(f"Unknown trigger '{name}': not a builtin ({', '.join(BUILTIN_PATTERNS)}) nor a PNG file")
