import math
import numpy as np
import pytest
from pydantic import ValidationError
from pybadbox.data import Annotation, BBox, Category, DetectionDataset, DetectionResult, ImageRecord
from pybadbox.evaluation import (EvalConfig, MatchTable, average_precision, box_iou, evaluate, iou,
                                 match_detections, render_table)
from pybadbox.exceptions import EvaluationError
from tests.fixtures.reference_eval import reference_evaluate

METRICS = ('mAP', 'AP50', 'AP75', 'APs', 'APm', 'APl')


def build(images, annotations, categories=(1,), size=400) -> DetectionDataset:
    """images: ids; annotations: (image_id, category_id, [x, y, w, h])."""
    return DetectionDataset(
        images=tuple(ImageRecord(id=i, file_name=f'{i}.png', width=size, height=size) for i in images),
        annotations=tuple(Annotation(id=k + 1, image_id=img, category_id=cat, bbox=box, area=box[2] * box[3])
                          for k, (img, cat, box) in enumerate(annotations)),
        categories=tuple(Category(id=c, name=f'c{c}') for c in categories),
    )


def det(image_id, category_id, box, score) -> DetectionResult:
    return DetectionResult(image_id=image_id, category_id=category_id, bbox=box, score=score)


def gt(box, category_id=1, ann_id=1) -> Annotation:
    return Annotation(id=ann_id, image_id=1, category_id=category_id, bbox=box, area=box[2] * box[3])


@pytest.fixture
def three_sizes():
    """One small, one medium and one large object per image, two images, two categories."""
    boxes = [
        (1, 1, [10, 10, 20, 20]),
        (1, 2, [50, 50, 50, 50]),
        (1, 1, [150, 150, 120, 120]),
        (2, 2, [5, 5, 30, 30]),
        (2, 1, [100, 100, 40, 60]),
        (2, 2, [200, 20, 100, 150]),
    ]
    return build([1, 2], boxes, categories=(1, 2))


def test_iou_identical_boxes():
    box = BBox(x=3, y=4, w=10, h=7)
    assert iou(box, box) == 1.0


def test_iou_shifted_boxes():
    assert iou(BBox(x=0, y=0, w=10, h=10), BBox(x=5, y=5, w=10, h=10)) == pytest.approx(25 / 175)


def test_iou_disjoint_and_empty():
    assert iou(BBox(x=0, y=0, w=10, h=10), BBox(x=20, y=20, w=5, h=5)) == 0.0
    assert iou(BBox(x=1, y=1, w=0, h=0), BBox(x=1, y=1, w=0, h=0)) == 0.0


def test_box_iou_matches_scalar_iou():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 50, size=(6, 4)).astype(float)
    b = rng.integers(0, 50, size=(4, 4)).astype(float)
    matrix = box_iou(a, b)
    assert matrix.shape == (6, 4)
    for i in range(6):
        for j in range(4):
            assert matrix[i, j] == pytest.approx(iou(BBox.from_list(list(a[i])), BBox.from_list(list(b[j]))))


def test_match_at_exact_threshold():
    # IoU of these two is exactly 0.5
    table = match_detections([gt([0, 0, 10, 10])], [det(1, 1, [0, 0, 10, 5], 0.7)], 0.5)
    assert table.is_tp == (True,)
    assert table.gt_matches == (0,)


def test_higher_score_wins_the_ground_truth():
    dets = [det(1, 1, [0, 0, 10, 10], 0.4), det(1, 1, [1, 0, 10, 10], 0.9)]
    table = match_detections([gt([0, 0, 10, 10])], dets, 0.5)
    assert table.scores == (0.9, 0.4)
    assert table.is_tp == (True, False)


def test_categories_never_match_each_other():
    table = match_detections([gt([0, 0, 10, 10], category_id=1)], [det(1, 2, [0, 0, 10, 10], 0.9)], 0.5)
    assert table.is_tp == (False,)
    assert table.gt_matches == (None,)


def test_equal_scores_keep_input_order():
    dets = [det(1, 1, [0, 0, 10, 10], 0.5), det(1, 1, [0, 0, 10, 10], 0.5)]
    assert match_detections([gt([0, 0, 10, 10])], dets, 0.5).is_tp == (True, False)


def test_ap_perfect_ranking():
    table = MatchTable(scores=(0.9, 0.8), is_tp=(True, True), num_gt=2)
    assert average_precision([table]) == 1.0


def test_ap_false_positive_first():
    table = MatchTable(scores=(0.9, 0.8), is_tp=(False, True), num_gt=1)
    assert average_precision([table]) == pytest.approx(0.5)


def test_ap_without_detections_or_ground_truth():
    assert average_precision([MatchTable(num_gt=3)]) == 0.0
    assert average_precision([MatchTable(scores=(0.9,), is_tp=(False,), num_gt=0)]) == -1.0


def test_ap_partial_recall():
    # recall 0.5 reached at precision 1: 51 of 101 grid points
    table = MatchTable(scores=(0.9,), is_tp=(True,), num_gt=2)
    assert average_precision([table]) == pytest.approx(51 / 101)


def test_perfect_detections_score_one_everywhere(three_sizes):
    dets = [det(a.image_id, a.category_id, a.bbox, 1.0) for a in three_sizes.annotations]
    report = evaluate(three_sizes, dets)
    assert report.metrics() == {name: 1.0 for name in METRICS}
    assert report.per_category == {1: 1.0, 2: 1.0}


def test_no_detections_score_zero(three_sizes):
    assert evaluate(three_sizes, []).metrics() == {name: 0.0 for name in METRICS}


def test_unknown_category_is_rejected(three_sizes):
    with pytest.raises(EvaluationError):
        evaluate(three_sizes, [det(1, 9, [0, 0, 5, 5], 0.5)])


def test_unknown_image_is_rejected(three_sizes):
    with pytest.raises(EvaluationError):
        evaluate(three_sizes, [det(7, 1, [0, 0, 5, 5], 0.5)])


def test_category_without_ground_truth_is_left_out():
    ds = build([1], [(1, 1, [10, 10, 40, 40])], categories=(1, 2))
    report = evaluate(ds, [det(1, 1, [10, 10, 40, 40], 0.9), det(1, 2, [0, 0, 40, 40], 0.8)])
    assert report.map == 1.0
    assert report.per_category == {1: 1.0, 2: -1.0}


def test_empty_strata_are_undefined():
    ds = build([1], [(1, 1, [10, 10, 40, 40])])
    report = evaluate(ds, [det(1, 1, [10, 10, 40, 40], 0.9)])
    assert (report.ap_small, report.ap_medium, report.ap_large) == (-1.0, 1.0, -1.0)


def test_zero_extent_ground_truth_is_excluded():
    ds = build([1], [(1, 1, [10, 10, 40, 40]), (1, 1, [60, 60, 0, 0])])
    report = evaluate(ds, [det(1, 1, [10, 10, 40, 40], 0.9)])
    assert report.excluded_zero_extent == 1
    assert report.warnings
    assert report.map == 1.0


def test_detections_outside_an_area_range_are_ignored():
    # the large false positive does not count against APs
    ds = build([1], [(1, 1, [10, 10, 20, 20])])
    report = evaluate(ds, [det(1, 1, [100, 100, 150, 150], 0.99), det(1, 1, [10, 10, 20, 20], 0.5)])
    assert report.ap_small == 1.0
    assert report.map < 1.0


def test_matched_detection_counts_in_the_ground_truth_range():
    # 30x30 object is small, the 33x33 box that finds it is medium
    ds = build([1], [(1, 1, [10, 10, 30, 30])])
    report = evaluate(ds, [det(1, 1, [10, 10, 33, 33], 0.9)])
    assert report.map == pytest.approx(0.7)
    assert report.ap_small == report.map
    assert report.ap_medium == -1.0


def test_in_range_ground_truth_is_preferred():
    gts = [gt([0, 0, 30, 30], ann_id=1), gt([0, 0, 32, 34], ann_id=2)]
    dets = [det(1, 1, [0, 0, 31, 33], 0.8)]
    assert match_detections(gts, dets, 0.5).gt_matches == (None, 0)
    table = match_detections(gts, dets, 0.5, area_range=(0.0, 1024.0))
    assert table.gt_matches == (0, None)
    assert table.is_tp == (True,)
    assert table.num_gt == 1


def test_detection_taking_out_of_range_ground_truth_is_dropped():
    table = match_detections([gt([10, 10, 20, 20])], [det(1, 1, [10, 10, 20, 20], 0.9)], 0.5,
                             area_range=(1024.0, 9216.0))
    assert table.scores == ()
    assert table.gt_matches == (None,)
    assert table.num_gt == 0


def test_detection_cap_per_image():
    ds = build([1], [(1, 1, [10, 10, 40, 40])])
    dets = [det(1, 1, [200, 200, 40, 40], 0.9), det(1, 1, [10, 10, 40, 40], 0.5)]
    assert evaluate(ds, dets, EvalConfig(max_detections_per_image=1)).map == 0.0
    assert evaluate(ds, dets, EvalConfig(max_detections_per_image=2)).map == pytest.approx(0.5)


def test_config_validation():
    with pytest.raises(ValidationError):
        EvalConfig(iou_thresholds=(0.7, 0.5))
    with pytest.raises(ValidationError):
        EvalConfig(iou_thresholds=(0.0, 0.5))
    with pytest.raises(ValidationError):
        EvalConfig(area_ranges={'small': (0.0, 100.0), 'large': (200.0, math.inf)})
    with pytest.raises(ValidationError):
        EvalConfig(area_ranges={'all': (0.0, math.inf)})
    assert EvalConfig().recall_grid()[50] == 0.5


def random_instance(rng):
    """At most 5 images, 5 GTs and 8 detections per image, two categories, integer boxes."""
    images = list(range(1, int(rng.integers(1, 6)) + 1))
    annotations, detections = [], []

    def box():
        w, h = (int(v) for v in rng.integers(1, 130, size=2))
        x, y = (int(v) for v in rng.integers(0, 200, size=2))
        return [x, y, w, h]

    for image_id in images:
        gts = [(image_id, int(rng.integers(1, 3)), box()) for _ in range(int(rng.integers(0, 6)))]
        annotations.extend(gts)
        for _ in range(int(rng.integers(0, 9))):
            score = round(float(rng.integers(1, 21)) / 20, 2)
            if gts and rng.uniform() < 0.7:
                _, category, (x, y, w, h) = gts[int(rng.integers(len(gts)))]
                dx, dy, dw, dh = (int(v) for v in rng.integers(-3, 4, size=4))
                candidate = [max(0, x + dx), max(0, y + dy), max(1, w + dw), max(1, h + dh)]
                if rng.uniform() < 0.2:
                    category = 3 - category
            else:
                category, candidate = int(rng.integers(1, 3)), box()
            detections.append((image_id, category, candidate, score))
    return images, annotations, detections


def test_matches_brute_force_reference():
    rng = np.random.default_rng(77)
    for _ in range(500):
        images, annotations, detections = random_instance(rng)
        ds = build(images, annotations, categories=(1, 2))
        dets = [det(*d) for d in detections]
        expected = reference_evaluate(images, annotations, [1, 2], detections)
        actual = evaluate(ds, dets).metrics()
        for name in METRICS:
            assert actual[name] == pytest.approx(expected[name], abs=1e-9), name


def distinct_scores(rng, detections):
    scores = rng.permutation(len(detections)) + 1
    return [(d[0], d[1], d[2], float(s) / 100) for d, s in zip(detections, scores)]


def test_score_shift_leaves_metrics_unchanged():
    rng = np.random.default_rng(3)
    for _ in range(50):
        images, annotations, detections = random_instance(rng)
        detections = distinct_scores(rng, detections)
        ds = build(images, annotations, categories=(1, 2))
        base = evaluate(ds, [det(*d) for d in detections])
        shifted = evaluate(ds, [det(i, c, b, s + 0.5) for i, c, b, s in detections])
        assert shifted.metrics() == base.metrics()


def test_input_order_does_not_matter():
    rng = np.random.default_rng(4)
    for _ in range(50):
        images, annotations, detections = random_instance(rng)
        detections = distinct_scores(rng, detections)
        ds = build(images, annotations, categories=(1, 2))
        shuffled = [detections[i] for i in rng.permutation(len(detections))]
        assert evaluate(ds, [det(*d) for d in shuffled]).metrics() == evaluate(ds, [det(*d) for d in detections]).metrics()


def test_threshold_ordering_of_metrics():
    rng = np.random.default_rng(5)
    for _ in range(100):
        images, annotations, detections = random_instance(rng)
        report = evaluate(build(images, annotations, categories=(1, 2)), [det(*d) for d in detections])
        if report.map == -1.0:
            continue
        assert 0.0 <= report.map <= 1.0
        assert report.ap50 >= report.map - 1e-12
        assert report.map >= report.per_threshold['0.95'] - 1e-12


def test_worker_count_does_not_change_report(three_sizes):
    rng = np.random.default_rng(6)
    dets = [det(a.image_id, a.category_id, [v + float(rng.integers(0, 4)) for v in a.bbox.to_list()],
                float(rng.uniform(0.1, 1.0))) for a in three_sizes.annotations]
    assert evaluate(three_sizes, dets, jobs=1) == evaluate(three_sizes, dets, jobs=4)


def test_render_table_column_order(three_sizes):
    dets = [det(a.image_id, a.category_id, a.bbox, 1.0) for a in three_sizes.annotations]
    text = render_table(evaluate(three_sizes, dets), title='benign')
    lines = text.splitlines()
    assert lines[0] == 'benign'
    assert lines[1].split() == list(METRICS)
    assert lines[2].split() == ['100.0'] * 6


def test_render_table_marks_undefined_metrics():
    ds = build([1], [(1, 1, [10, 10, 40, 40])])
    text = render_table(evaluate(ds, []))
    assert text.splitlines()[1].split() == ['0.0', '0.0', '0.0', '-', '0.0', '-']
