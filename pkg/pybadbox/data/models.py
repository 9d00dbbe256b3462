from collections import defaultdict
from typing import Any
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BBox(BaseModel):
    """
    Axis-aligned box in COCO top-left form [x, y, w, h], in pixels.

    Zero width or height is allowed: the annotation transform of the attack
    collapses boxes to a point while keeping their center.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x: float
    y: float
    w: float = Field(ge=0)
    h: float = Field(ge=0)

    @classmethod
    def from_list(cls, values: Any) -> 'BBox':
        if isinstance(values, BBox):
            return values
        if isinstance(values, dict):
            return cls(**values)
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise ValueError(f"bbox must be a list of 4 numbers, got {values!r}")
        x, y, w, h = values
        return cls(x=x, y=y, w=w, h=h)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    @property
    def is_degenerate(self) -> bool:
        return self.w == 0 or self.h == 0


def _coerce_bbox(value: Any) -> BBox:
    return BBox.from_list(value)


class Annotation(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow', allow_inf_nan=False)

    id: int
    image_id: int
    category_id: int
    bbox: BBox
    area: float
    iscrowd: int = 0

    @model_validator(mode='before')
    @classmethod
    def fill_area(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get('area') is None and 'bbox' in data:
            box = _coerce_bbox(data['bbox'])
            data = {**data, 'area': box.area}
        return data

    @field_validator('bbox', mode='before')
    @classmethod
    def parse_bbox(cls, value: Any) -> BBox:
        return _coerce_bbox(value)

    @field_validator('iscrowd')
    @classmethod
    def crowd_flag(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError(f"iscrowd must be 0 or 1, got {value}")
        return value

    def to_record(self) -> dict:
        record = {
            'id': self.id,
            'image_id': self.image_id,
            'category_id': self.category_id,
            'bbox': self.bbox.to_list(),
            'area': self.area,
            'iscrowd': self.iscrowd,
        }
        record.update(self.model_extra or {})
        return record


class ImageRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    id: int
    file_name: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    def to_record(self) -> dict:
        record = {'id': self.id, 'file_name': self.file_name, 'width': self.width, 'height': self.height}
        record.update(self.model_extra or {})
        return record


class Category(BaseModel):
    model_config = ConfigDict(frozen=True, extra='allow')

    id: int
    name: str

    def to_record(self) -> dict:
        record = {'id': self.id, 'name': self.name}
        record.update(self.model_extra or {})
        return record


class DetectionDataset(BaseModel):
    """
    Images, object annotations and categories of a COCO-style detection set.

    Instances are immutable: poisoning and splitting build new datasets with
    ``model_copy(update=...)`` or the helpers below. Top-level keys other than
    the three collections (info, licenses...) are kept as extras.
    """
    model_config = ConfigDict(frozen=True, extra='allow')

    images: tuple[ImageRecord, ...] = ()
    annotations: tuple[Annotation, ...] = ()
    categories: tuple[Category, ...] = ()

    def image_index(self) -> dict[int, ImageRecord]:
        return {image.id: image for image in self.images}

    def category_ids(self) -> list[int]:
        return sorted(category.id for category in self.categories)

    def category_name(self, category_id: int) -> str:
        for category in self.categories:
            if category.id == category_id:
                return category.name
        raise KeyError(category_id)

    def annotations_by_image(self) -> dict[int, list[Annotation]]:
        grouped: dict[int, list[Annotation]] = defaultdict(list)
        for annotation in self.annotations:
            grouped[annotation.image_id].append(annotation)
        return {image.id: grouped.get(image.id, []) for image in self.images}

    def with_annotations(self, annotations: list[Annotation]) -> 'DetectionDataset':
        return self.model_copy(update={'annotations': tuple(annotations)})

    def subset(self, image_ids: set[int] | list[int]) -> 'DetectionDataset':
        """Dataset restricted to the given images and their annotations, categories kept."""
        wanted = set(image_ids)
        return self.model_copy(update={
            'images': tuple(image for image in self.images if image.id in wanted),
            'annotations': tuple(ann for ann in self.annotations if ann.image_id in wanted),
        })


class DetectionResult(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    image_id: int
    category_id: int
    bbox: BBox
    score: float = Field(ge=0.0, le=1.0)

    @field_validator('bbox', mode='before')
    @classmethod
    def parse_bbox(cls, value: Any) -> BBox:
        return _coerce_bbox(value)

    def to_record(self) -> dict:
        return {'image_id': self.image_id, 'category_id': self.category_id, 'bbox': self.bbox.to_list(), 'score': self.score}
