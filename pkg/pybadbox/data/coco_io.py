import json
from collections import Counter
from pathlib import Path
from pydantic import ValidationError
from pybadbox.data.models import BBox, DetectionDataset, DetectionResult
from pybadbox.exceptions import DatasetParseError, DatasetValidationError
from pybadbox.logs import get_logger
from pybadbox.utils import dumps, sha256_hex, write_json

logger = get_logger(__name__)

REQUIRED_KEYS = ('images', 'annotations', 'categories')
AREA_TOLERANCE = 1e-6


def bbox_center_form(b: BBox) -> tuple[float, float, float, float]:
    """Return (x̂, ŷ, w, h): the box center followed by its extent."""
    return (b.x + b.w / 2, b.y + b.h / 2, b.w, b.h)


def bbox_from_center(cx: float, cy: float, w: float, h: float) -> BBox:
    return BBox(x=cx - w / 2, y=cy - h / 2, w=w, h=h)


def parse_json(raw: bytes, source: str):
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        logger.error("File %s is not UTF-8: %s", source, e)
        raise DatasetParseError(f"{source} is not valid UTF-8", byte_offset=e.start)
    if text.startswith('\ufeff'):
        text = text[1:]
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        byte_offset = len(text[:e.pos].encode('utf-8'))
        logger.error("Malformed JSON in %s: %s", source, e)
        raise DatasetParseError(f"Malformed JSON in {source}: {e.msg}", byte_offset=byte_offset)


def _duplicates(values) -> list:
    return [value for value, count in Counter(values).items() if count > 1]


def check_dataset(ds: DetectionDataset) -> list[str]:
    """
    Check the referential invariants of a dataset.

    Raises DatasetValidationError for duplicate ids and for annotations that
    point at missing images or categories. Boxes sticking out of their image
    and stored areas that disagree with w * h are returned as warnings: public
    COCO files contain both.
    """
    for name, records in (('image', ds.images), ('annotation', ds.annotations), ('category', ds.categories)):
        duplicated = _duplicates(record.id for record in records)
        if duplicated:
            raise DatasetValidationError(f"Duplicate {name} ids", duplicated)

    images = ds.image_index()
    category_ids = set(ds.category_ids())
    dangling_images = [ann.id for ann in ds.annotations if ann.image_id not in images]
    if dangling_images:
        raise DatasetValidationError("Annotations reference missing images", dangling_images)
    dangling_categories = [ann.id for ann in ds.annotations if ann.category_id not in category_ids]
    if dangling_categories:
        raise DatasetValidationError("Annotations reference missing categories", dangling_categories)

    warnings = []
    for ann in ds.annotations:
        image = images[ann.image_id]
        x1, y1, x2, y2 = ann.bbox.corners
        if x1 < 0 or y1 < 0 or x2 > image.width or y2 > image.height:
            warnings.append(f"annotation {ann.id}: bbox {ann.bbox.to_list()} exceeds image {image.id} "
                            f"({image.width}x{image.height})")
        if abs(ann.area - ann.bbox.area) > AREA_TOLERANCE * max(1.0, ann.bbox.area):
            warnings.append(f"annotation {ann.id}: area {ann.area} differs from bbox area {ann.bbox.area}")
    if warnings:
        logger.warning("Dataset has %s warnings, first: %s", len(warnings), warnings[0])
    return warnings


def dataset_from_dict(data) -> DetectionDataset:
    if not isinstance(data, dict):
        raise DatasetValidationError("Annotations file must contain a JSON object")
    missing = [key for key in REQUIRED_KEYS if key not in data]
    if missing:
        raise DatasetValidationError(f"Annotations file is missing keys {missing}")
    try:
        ds = DetectionDataset.model_validate(data)
    except ValidationError as e:
        logger.error("Invalid dataset records: %s", e)
        raise DatasetValidationError(f"Invalid dataset records: {e}")
    check_dataset(ds)
    return ds


def dataset_to_dict(ds: DetectionDataset) -> dict:
    data = {
        'images': [image.to_record() for image in ds.images],
        'annotations': [ann.to_record() for ann in ds.annotations],
        'categories': [category.to_record() for category in ds.categories],
    }
    data.update(ds.model_extra or {})
    return data


def load_dataset(path: Path) -> DetectionDataset:
    """
    Load and validate a COCO-style annotations file.

    Raises:
        FileNotFoundError: if the file does not exist.
        DatasetParseError: on malformed UTF-8 or JSON, with the byte offset of the fault.
        DatasetValidationError: when the records break a dataset invariant.
    """
    path = Path(path)
    ds = dataset_from_dict(parse_json(path.read_bytes(), str(path)))
    logger.info("Loaded %s: %s images, %s annotations, %s categories",
                path, len(ds.images), len(ds.annotations), len(ds.categories))
    return ds


def save_dataset(ds: DetectionDataset, path: Path) -> None:
    try:
        write_json(dataset_to_dict(ds), Path(path))
    except OSError as e:
        logger.error("Unable to write dataset to %s: %s", path, e)
        raise


def dataset_digest(ds: DetectionDataset) -> str:
    """sha256 of the canonical serialization, independent of the file the dataset came from."""
    return sha256_hex(dumps(dataset_to_dict(ds)).encode('utf-8'))


def load_detections(path: Path) -> list[DetectionResult]:
    path = Path(path)
    data = parse_json(path.read_bytes(), str(path))
    if not isinstance(data, list):
        raise DatasetValidationError("Results file must contain a JSON list")
    results = []
    for index, record in enumerate(data):
        try:
            results.append(DetectionResult.model_validate(record))
        except ValidationError as e:
            logger.error("Invalid detection record %s in %s: %s", index, path, e)
            raise DatasetValidationError(f"Invalid detection record at index {index}: {e}", [index])
    logger.info("Loaded %s detections from %s", len(results), path)
    return results


def save_detections(dets: list[DetectionResult], path: Path) -> None:
    try:
        write_json([det.to_record() for det in dets], Path(path))
    except OSError as e:
        logger.error("Unable to write detections to %s: %s", path, e)
        raise
