"""
Brute-force AP reference: plain Python over raw records, enumerating the
precision/recall curve cutoff by cutoff. Shares no code with
pybadbox.evaluation.
"""

THRESHOLDS = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
AREAS = {'all': (0.0, float('inf')), 'small': (0.0, 1024.0), 'medium': (1024.0, 9216.0), 'large': (9216.0, float('inf'))}


def reference_iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def reference_match(gts, dets, thr, span=(0.0, float('inf'))):
    """
    gts: list of boxes; dets: list of (score, box) already in rank order.
    Returns one flag per detection: True, False, or None when the detection
    is ignored (it took an out-of-range GT, or stayed unmatched outside the range).
    """
    lo, hi = span
    inside = [lo <= g[2] * g[3] < hi for g in gts]
    taken = [False] * len(gts)
    flags = []
    for _, box in dets:
        best = None
        for wanted in (True, False):
            best_iou = None
            for gi, gt in enumerate(gts):
                if taken[gi] or inside[gi] != wanted:
                    continue
                overlap = reference_iou(box, gt)
                if overlap >= thr and (best_iou is None or overlap > best_iou):
                    best, best_iou = gi, overlap
            if best is not None:
                break
        if best is not None:
            taken[best] = True
            flags.append(True if inside[best] else None)
        else:
            flags.append(False if lo <= box[2] * box[3] < hi else None)
    return flags


def reference_ap(ranked, num_gt, points=101):
    """ranked: list of (score, tp) in final rank order."""
    if num_gt == 0:
        return -1.0
    curve = []
    tp = 0
    for k, (_, hit) in enumerate(ranked, start=1):
        tp += 1 if hit else 0
        curve.append((tp / num_gt, tp / k))
    total = 0.0
    for i in range(points):
        q = i / (points - 1)
        reachable = [precision for recall, precision in curve if recall >= q]
        total += max(reachable) if reachable else 0.0
    return total / points


def reference_evaluate(images, annotations, categories, detections, max_dets=100):
    """
    images: list of ids; annotations: list of (image_id, category_id, box);
    detections: list of (image_id, category_id, box, score) in input order.
    Returns the six metrics keyed like EvalReport.metrics().
    """
    annotations = [a for a in annotations if a[2][2] > 0 and a[2][3] > 0]
    table = {}
    for area_name, (lo, hi) in AREAS.items():
        for category in categories:
            per_threshold = []
            for thr in THRESHOLDS:
                pooled = []
                num_gt = 0
                for image_id in sorted(images):
                    gts = [a[2] for a in annotations if a[0] == image_id and a[1] == category]
                    num_gt += sum(1 for g in gts if lo <= g[2] * g[3] < hi)
                    mine = [(i, d) for i, d in enumerate(detections) if d[0] == image_id and d[1] == category]
                    mine.sort(key=lambda item: (-item[1][3], item[0]))
                    mine = mine[:max_dets]
                    ranked = [(d[3], d[2]) for _, d in mine]
                    flags = reference_match(gts, ranked, thr, (lo, hi))
                    kept = [(score, hit) for (score, _), hit in zip(ranked, flags) if hit is not None]
                    for rank, (score, hit) in enumerate(kept):
                        pooled.append((score, image_id, rank, hit))
                pooled.sort(key=lambda item: (-item[0], item[1], item[2]))
                per_threshold.append(reference_ap([(p[0], p[3]) for p in pooled], num_gt))
            table[(area_name, category)] = per_threshold

    def mean(area_name, index=None):
        values = []
        for category in categories:
            aps = table[(area_name, category)]
            if aps[0] == -1.0:
                continue
            values.extend(aps if index is None else [aps[index]])
        return sum(values) / len(values) if values else -1.0

    return {'mAP': mean('all'), 'AP50': mean('all', 0), 'AP75': mean('all', 5),
            'APs': mean('small'), 'APm': mean('medium'), 'APl': mean('large')}
