import math
from collections import defaultdict
from typing import Sequence
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pybadbox import BadBox
from pybadbox.constants import AREA_RANGES, IOU_THRESHOLDS, MAX_DETECTIONS, RECALL_POINTS, UNDEFINED_AP
from pybadbox.data.models import Annotation, BBox, DetectionDataset, DetectionResult
from pybadbox.exceptions import EvaluationError
from pybadbox.logs import get_logger
from pybadbox.utils import format_number, parallel_map

logger = get_logger(__name__)

ALL_AREAS = 'all'


class EvalConfig(BaseModel):
    """
    COCO evaluation protocol: IoU thresholds 0.50:0.05:0.95, 101 recall points,
    area ranges split at 32² and 96², at most 100 detections per image and
    category.
    """
    model_config = ConfigDict(frozen=True)

    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    recall_points: int = Field(default=RECALL_POINTS, ge=2)
    area_ranges: dict[str, tuple[float, float]] = Field(default_factory=lambda: dict(AREA_RANGES))
    max_detections_per_image: int = Field(default=MAX_DETECTIONS, ge=1)

    @field_validator('iou_thresholds')
    @classmethod
    def increasing(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("At least one IoU threshold is required")
        if any(not 0.0 < t <= 1.0 for t in value):
            raise ValueError(f"IoU thresholds must lie in (0, 1], got {value}")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f"IoU thresholds must be strictly increasing, got {value}")
        return value

    @field_validator('area_ranges')
    @classmethod
    def disjoint_and_covering(cls, value: dict[str, tuple[float, float]]) -> dict[str, tuple[float, float]]:
        if ALL_AREAS in value:
            raise ValueError(f"'{ALL_AREAS}' is reserved for the unrestricted range")
        spans = sorted(value.values())
        if not spans or spans[0][0] != 0.0 or spans[-1][1] != math.inf:
            raise ValueError("Area ranges must start at 0 and end at infinity")
        if any(lo >= hi for lo, hi in spans) or any(a[1] != b[0] for a, b in zip(spans, spans[1:])):
            raise ValueError(f"Area ranges must be disjoint and contiguous, got {value}")
        return value

    def recall_grid(self) -> np.ndarray:
        return np.arange(self.recall_points) / (self.recall_points - 1)

    def threshold_index(self, threshold: float) -> int | None:
        for index, t in enumerate(self.iou_thresholds):
            if math.isclose(t, threshold):
                return index
        return None

    def to_record(self) -> dict:
        """Plain JSON form; an open upper area bound is written as null."""
        return {
            'iou_thresholds': list(self.iou_thresholds),
            'recall_points': self.recall_points,
            'area_ranges': {name: [lo, None if math.isinf(hi) else hi] for name, (lo, hi) in self.area_ranges.items()},
            'max_detections_per_image': self.max_detections_per_image,
        }


class MatchTable(BaseModel):
    """Greedy matching outcome for one image, one category and one IoU threshold."""
    model_config = ConfigDict(frozen=True)

    scores: tuple[float, ...] = ()
    is_tp: tuple[bool, ...] = ()
    gt_matches: tuple[int | None, ...] = ()
    num_gt: int = 0


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    map: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    per_category: dict[int, float] = Field(default_factory=dict)
    per_threshold: dict[str, float] = Field(default_factory=dict)
    excluded_zero_extent: int = 0
    warnings: tuple[str, ...] = ()

    def metrics(self) -> dict[str, float]:
        """The six headline metrics in result-table column order."""
        return {'mAP': self.map, 'AP50': self.ap50, 'AP75': self.ap75,
                'APs': self.ap_small, 'APm': self.ap_medium, 'APl': self.ap_large}

    def to_record(self) -> dict:
        record = dict(self.metrics())
        record['per_category'] = {str(k): v for k, v in sorted(self.per_category.items())}
        record['per_threshold'] = dict(self.per_threshold)
        record['excluded_zero_extent'] = self.excluded_zero_extent
        return record


def iou(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    inter = max(0.0, min(ax2, bx2) - max(ax1, bx1)) * max(0.0, min(ay2, by2) - max(ay1, by1))
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (n, 4) and (m, 4) arrays of [x, y, w, h] boxes, shape (n, m)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    d = np.concatenate([a[:, :2], a[:, :2] + a[:, 2:]], axis=1)
    g = np.concatenate([b[:, :2], b[:, :2] + b[:, 2:]], axis=1)
    iw = np.clip(np.minimum(d[:, None, 2], g[None, :, 2]) - np.maximum(d[:, None, 0], g[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(d[:, None, 3], g[None, :, 3]) - np.maximum(d[:, None, 1], g[None, :, 1]), 0, None)
    inter = iw * ih
    union = ((d[:, 2] - d[:, 0]) * (d[:, 3] - d[:, 1]))[:, None] + ((g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1]))[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def iou_matrix(dets: Sequence[BBox], gts: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(dets), len(gts))."""
    return box_iou([box.to_list() for box in dets], [box.to_list() for box in gts])


def _by_score(dets: Sequence[DetectionResult]) -> list[DetectionResult]:
    # sorted() is stable: equal scores keep input order
    return sorted(dets, key=lambda d: -d.score)


def match_detections(gts: Sequence[Annotation], dets: Sequence[DetectionResult], iou_thr: float,
                     overlaps: np.ndarray | None = None,
                     area_range: tuple[float, float] | None = None) -> MatchTable:
    """
    Greedily match detections, highest score first, to unmatched ground truth
    of the same category. A detection takes the GT with the highest IoU that
    is ≥ iou_thr (first GT on ties); each GT is matched at most once.

    With an area_range, ground truth outside the range is ignored: it is only
    taken when no in-range GT qualifies, and the detection that takes it is
    dropped from the table. Unmatched detections outside the range are
    dropped as well, so they never count as false positives.
    """
    ordered = _by_score(dets) if overlaps is None else list(dets)
    if overlaps is None:
        overlaps = iou_matrix([d.bbox for d in ordered], [g.bbox for g in gts])
    inside = [area_range is None or _in_range(g.bbox, area_range) for g in gts]
    taken = [False] * len(gts)
    gt_matches: list[int | None] = [None] * len(gts)
    scores, is_tp = [], []
    for di, det in enumerate(ordered):
        best = None
        for wanted in (True, False):
            best_iou = -1.0
            for gi, gt in enumerate(gts):
                if taken[gi] or inside[gi] != wanted or gt.category_id != det.category_id:
                    continue
                overlap = overlaps[di, gi]
                if overlap >= iou_thr and overlap > best_iou:
                    best, best_iou = gi, overlap
            if best is not None:
                break
        if best is not None:
            taken[best] = True
            if not inside[best]:
                continue
            gt_matches[best] = len(scores)
        elif area_range is not None and not _in_range(det.bbox, area_range):
            continue
        scores.append(det.score)
        is_tp.append(best is not None)
    return MatchTable(scores=tuple(scores), is_tp=tuple(is_tp), gt_matches=tuple(gt_matches), num_gt=sum(inside))


def average_precision(matches: Sequence[MatchTable], num_gt: int | None = None,
                      recall_points: int = RECALL_POINTS) -> float:
    """
    Interpolated AP of detections pooled from several match tables.

    Detections are ordered by descending score (stable, so equal scores keep
    the order of the tables and of the detections inside them). Interpolated
    precision at recall q is the best precision at any operating point with
    recall ≥ q, or 0 when recall q is never reached. Returns -1 when there is
    no ground truth.
    """
    if num_gt is None:
        num_gt = sum(table.num_gt for table in matches)
    if num_gt == 0:
        return UNDEFINED_AP
    scores = np.array([s for table in matches for s in table.scores], dtype=np.float64)
    if scores.size == 0:
        return 0.0
    is_tp = np.array([t for table in matches for t in table.is_tp], dtype=bool)
    order = np.argsort(-scores, kind='mergesort')
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.arange(recall_points) / (recall_points - 1)
    first = np.searchsorted(recall, grid, side='left')
    interpolated = np.where(first < recall.size, envelope[np.minimum(first, recall.size - 1)], 0.0)
    return float(np.mean(interpolated))


def _in_range(box: BBox, span: tuple[float, float]) -> bool:
    return span[0] <= box.area < span[1]


def _check_detections(gt: DetectionDataset, dets: Sequence[DetectionResult]) -> None:
    images = gt.image_index()
    categories = set(gt.category_ids())
    unknown_images = sorted({d.image_id for d in dets if d.image_id not in images})
    if unknown_images:
        raise EvaluationError(f"Detections reference images missing from the ground truth: {unknown_images}")
    unknown_categories = sorted({d.category_id for d in dets if d.category_id not in categories})
    if unknown_categories:
        raise EvaluationError(f"Detections reference unknown categories: {unknown_categories}")


def _mean_defined(values) -> float:
    defined = [v for v in values if v != UNDEFINED_AP]
    return float(np.mean(defined)) if defined else UNDEFINED_AP


def evaluate(gt: DetectionDataset, dets: Sequence[DetectionResult], cfg: EvalConfig | None = None,
             jobs: int | None = None) -> EvalReport:
    """
    Compute mAP, AP50, AP75, APs, APm and APl.

    Per image and category, detections are ranked by score and cut to
    max_detections_per_image. For an area range, ground truth outside it is
    ignored and unmatched detections outside it are dropped, as in
    match_detections. Crowd flags are ignored. Zero-extent ground truth can
    never be matched and is left out with a warning. Categories without
    ground truth count as undefined (-1) and are left out of every mean.

    Raises:
        EvaluationError: when a detection names an image or category the ground truth lacks.
    """
    cfg = cfg or EvalConfig()
    jobs = jobs or BadBox().get_settings().jobs
    _check_detections(gt, dets)

    warnings = []
    kept = [ann for ann in gt.annotations if not ann.bbox.is_degenerate]
    excluded = len(gt.annotations) - len(kept)
    if excluded:
        message = f"{excluded} zero-extent ground-truth boxes excluded from evaluation"
        logger.warning(message)
        warnings.append(message)

    gts_by_key: dict[tuple[int, int], list[Annotation]] = defaultdict(list)
    for ann in kept:
        gts_by_key[(ann.image_id, ann.category_id)].append(ann)
    dets_by_key: dict[tuple[int, int], list[DetectionResult]] = defaultdict(list)
    for det in dets:
        dets_by_key[(det.image_id, det.category_id)].append(det)

    categories = gt.category_ids()
    ranges = {ALL_AREAS: (0.0, math.inf), **cfg.area_ranges}
    image_ids = sorted(image.id for image in gt.images)

    def match_image(image_id: int) -> dict[tuple[str, int], list[MatchTable]]:
        tables = {}
        for category_id in categories:
            image_gts = gts_by_key.get((image_id, category_id), [])
            image_dets = _by_score(dets_by_key.get((image_id, category_id), []))[:cfg.max_detections_per_image]
            overlaps = iou_matrix([d.bbox for d in image_dets], [g.bbox for g in image_gts])
            for name, span in ranges.items():
                tables[(name, category_id)] = [match_detections(image_gts, image_dets, thr, overlaps, span)
                                               for thr in cfg.iou_thresholds]
        return tables

    per_image = parallel_map(match_image, image_ids, jobs=jobs, desc='matching')

    # ap[name][category] -> one AP per threshold
    ap: dict[str, dict[int, list[float]]] = {name: {} for name in ranges}
    for name in ranges:
        for category_id in categories:
            ap[name][category_id] = [
                average_precision([tables[(name, category_id)][t] for tables in per_image],
                                  recall_points=cfg.recall_points)
                for t in range(len(cfg.iou_thresholds))
            ]

    def mean_over(name: str, threshold_index: int | None = None) -> float:
        values = []
        for per_threshold in ap[name].values():
            if per_threshold[0] == UNDEFINED_AP:
                continue
            values.extend(per_threshold if threshold_index is None else [per_threshold[threshold_index]])
        return float(np.mean(values)) if values else UNDEFINED_AP

    def at(threshold: float) -> float:
        index = cfg.threshold_index(threshold)
        return UNDEFINED_AP if index is None else mean_over(ALL_AREAS, index)

    stratum = {name: mean_over(name) if name in ap else UNDEFINED_AP for name in ('small', 'medium', 'large')}
    report = EvalReport(
        map=mean_over(ALL_AREAS), ap50=at(0.5), ap75=at(0.75),
        ap_small=stratum['small'], ap_medium=stratum['medium'], ap_large=stratum['large'],
        per_category={c: _mean_defined(values) for c, values in ap[ALL_AREAS].items()},
        per_threshold={format_number(thr): mean_over(ALL_AREAS, i) for i, thr in enumerate(cfg.iou_thresholds)},
        excluded_zero_extent=excluded, warnings=tuple(warnings),
    )
    logger.info("Evaluated %s detections on %s images: mAP %.4f", len(dets), len(image_ids), report.map)
    return report
