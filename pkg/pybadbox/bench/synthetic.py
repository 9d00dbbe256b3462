from pathlib import Path
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pybadbox import BadBox
from pybadbox.constants import ANNOTATIONS_FILE, IMAGES_DIR, NEGATIVE_IOU, SHAPES
from pybadbox.data.coco_io import save_dataset
from pybadbox.data.models import Annotation, BBox, Category, DetectionDataset, ImageRecord
from pybadbox.evaluation.ap_eval import iou
from pybadbox.logs import get_logger
from pybadbox.trigger.image_io import ImageBuffer, write_image
from pybadbox.utils import parallel_map

logger = get_logger(__name__)

PLACEMENT_RETRIES = 100
COLOUR_RANGE = (70, 190)


class SynthConfig(BaseModel):
    """
    Synthetic shapes dataset. Objects are squares, circles and triangles drawn
    in a size from object_sizes at a position on a grid-pixel lattice, over a
    dark noise background whose channels lie in [0, noise_level].
    """
    model_config = ConfigDict(frozen=True)

    num_images: int = Field(default=100, ge=0)
    image_size: int = Field(default=64, ge=8)
    shapes: tuple[str, ...] = SHAPES
    object_sizes: tuple[int, ...] = (16, 24, 32)
    grid: int = Field(default=4, ge=1)
    objects_per_image: tuple[int, int] = (1, 3)
    noise_level: int = Field(default=40, ge=0, lt=COLOUR_RANGE[0])
    max_overlap: float = Field(default=NEGATIVE_IOU, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    first_image_id: int = 1
    first_annotation_id: int = 1

    @model_validator(mode='after')
    def consistent(self) -> 'SynthConfig':
        unknown = [shape for shape in self.shapes if shape not in SHAPES]
        if unknown or not self.shapes:
            raise ValueError(f"Shapes must be drawn from {SHAPES}, got {self.shapes}")
        if not self.object_sizes or max(self.object_sizes) > self.image_size or min(self.object_sizes) < 2:
            raise ValueError(f"Object sizes {self.object_sizes} must lie in [2, {self.image_size}]")
        low, high = self.objects_per_image
        if low < 0 or high < low:
            raise ValueError(f"Invalid objects_per_image range {self.objects_per_image}")
        return self


def shape_mask(shape: str, size: int) -> np.ndarray:
    """Boolean (size, size) mask of a shape filling its square, sampled at pixel centers."""
    centers = np.arange(size) + 0.5
    rows, cols = np.meshgrid(centers, centers, indexing='ij')
    if shape == 'square':
        return np.ones((size, size), dtype=bool)
    if shape == 'circle':
        return (rows - size / 2) ** 2 + (cols - size / 2) ** 2 <= (size / 2) ** 2
    if shape == 'triangle':
        # apex at the top middle, base along the bottom edge
        return np.abs(cols - size / 2) <= rows / 2
    raise ValueError(f"Unknown shape '{shape}'")


def tight_bbox(mask: np.ndarray, x: int, y: int) -> BBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(x=x + int(cols[0]), y=y + int(rows[0]),
                w=int(cols[-1] - cols[0] + 1), h=int(rows[-1] - rows[0] + 1))


def _place(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[str, int, int, int, BBox]] | None:
    placed = []
    for _ in range(int(rng.integers(cfg.objects_per_image[0], cfg.objects_per_image[1] + 1))):
        for _attempt in range(PLACEMENT_RETRIES):
            shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
            size = cfg.object_sizes[int(rng.integers(len(cfg.object_sizes)))]
            slots = (cfg.image_size - size) // cfg.grid + 1
            x, y = (int(v) * cfg.grid for v in rng.integers(slots, size=2))
            box = tight_bbox(shape_mask(shape, size), x, y)
            if all(iou(box, other[4]) <= cfg.max_overlap for other in placed):
                placed.append((shape, size, x, y, box))
                break
        else:
            return None
    return placed


def render_image(cfg: SynthConfig, index: int) -> tuple[ImageBuffer, list[tuple[str, BBox]]]:
    """Draw image number index. Its generator is seeded with (seed, index), so images are independent of each other."""
    rng = np.random.default_rng([cfg.seed, index])
    placed = _place(cfg, rng)
    while placed is None:
        logger.debug("Image %s: objects could not be placed, regenerating", index)
        placed = _place(cfg, rng)

    side = cfg.image_size
    pixels = rng.integers(0, cfg.noise_level + 1, size=(side, side, 3), dtype=np.uint8)
    objects = []
    for shape, size, x, y, box in placed:
        colour = rng.integers(COLOUR_RANGE[0], COLOUR_RANGE[1] + 1, size=3, dtype=np.uint8)
        region = pixels[y:y + size, x:x + size]
        region[shape_mask(shape, size)] = colour
        objects.append((shape, box))
    return ImageBuffer(data=pixels), objects


def generate_synthetic(cfg: SynthConfig, out_root: Path, jobs: int | None = None) -> DetectionDataset:
    """
    Write cfg.num_images PNG images to out_root/images and their annotations
    to out_root/annotations.json. Output is identical for identical configs.
    """
    out_root = Path(out_root)
    jobs = jobs or BadBox().get_settings().jobs
    categories = [Category(id=SHAPES.index(shape) + 1, name=shape) for shape in cfg.shapes]
    category_of = {category.name: category.id for category in categories}

    def make(index: int) -> tuple[ImageRecord, list[tuple[str, BBox]]]:
        image_id = cfg.first_image_id + index
        pixels, objects = render_image(cfg, index)
        record = ImageRecord(id=image_id, file_name=f"{image_id:06d}.png", width=cfg.image_size, height=cfg.image_size)
        write_image(pixels, out_root / IMAGES_DIR / record.file_name)
        return record, objects

    made = parallel_map(make, list(range(cfg.num_images)), jobs=jobs, desc='generating')
    images, annotations = [], []
    next_id = cfg.first_annotation_id
    for record, objects in made:
        images.append(record)
        for shape, box in objects:
            annotations.append(Annotation(id=next_id, image_id=record.id, category_id=category_of[shape],
                                          bbox=box, area=box.area, iscrowd=0))
            next_id += 1

    ds = DetectionDataset(images=tuple(images), annotations=tuple(annotations), categories=tuple(categories))
    save_dataset(ds, out_root / ANNOTATIONS_FILE)
    logger.info("Generated %s images with %s objects in %s", len(images), len(annotations), out_root)
    return ds
