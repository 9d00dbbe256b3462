from pybadbox.data.models import BBox, Annotation, ImageRecord, Category, DetectionDataset, DetectionResult
from pybadbox.data.coco_io import (load_dataset, save_dataset, load_detections, save_detections,
                                   bbox_center_form, bbox_from_center, check_dataset, dataset_digest,
                                   dataset_to_dict, dataset_from_dict)

__all__ = [
    'BBox', 'Annotation', 'ImageRecord', 'Category', 'DetectionDataset', 'DetectionResult',
    'load_dataset', 'save_dataset', 'load_detections', 'save_detections', 'bbox_center_form',
    'bbox_from_center', 'check_dataset', 'dataset_digest', 'dataset_to_dict', 'dataset_from_dict',
]
