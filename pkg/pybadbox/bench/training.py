from pathlib import Path
from typing import Callable
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pybadbox import BadBox
from pybadbox.constants import MAX_DETECTIONS, NEGATIVE_IOU, POSITIVE_IOU
from pybadbox.bench.detector import DetectorArchitecture, ToyDetector
from pybadbox.data.models import DetectionDataset, DetectionResult
from pybadbox.evaluation.ap_eval import EvalReport, box_iou, evaluate
from pybadbox.exceptions import TrainingError
from pybadbox.logs import get_logger
from pybadbox.trigger.image_io import ImageBuffer, read_image
from pybadbox.utils import parallel_map, progress, round_half_up

logger = get_logger(__name__)


class TrainConfig(BaseModel):
    """
    Crop mining and optimisation settings.

    Positives are the windows overlapping a ground-truth box at IoU ≥ 0.5 (the
    best positives_per_object of them), negatives are windows below IoU 0.3
    with every box, sampled at negative_per_positive per positive. Each hard
    negative round rescans the training images and adds the background
    windows the current model scores above hard_negative_threshold.
    """
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=12, ge=1)
    learning_rate: float = Field(default=0.05, gt=0.0)
    batch_size: int = Field(default=64, ge=1)
    negative_per_positive: int = Field(default=3, ge=0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    positives_per_object: int = Field(default=1, ge=1)
    hard_negative_rounds: int = Field(default=2, ge=0)
    hard_negative_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    hard_negatives_per_image: int = Field(default=4, ge=1)
    hidden: int = Field(default=32, ge=4)
    window_sizes: tuple[int, ...] = (16, 24, 32)
    stride: int = Field(default=4, ge=1)
    feature_grid: int = Field(default=16, ge=2)
    seed: int = Field(default=0, ge=0)

    def architecture(self, category_ids: tuple[int, ...]) -> DetectorArchitecture:
        return DetectorArchitecture(window_sizes=self.window_sizes, stride=self.stride, feature_grid=self.feature_grid,
                                    hidden=self.hidden, category_ids=category_ids)


class DetectParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    score_thr: float = Field(default=0.5, ge=0.0, le=1.0)
    nms_iou: float = Field(default=0.3, ge=0.0, le=1.0)
    max_detections: int = Field(default=MAX_DETECTIONS, ge=1)


class CropSet(BaseModel):
    """Window features (n, feature_dim) with labels: 0 is background, k is architecture.category_ids[k - 1]."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def extend(self, other: 'CropSet') -> 'CropSet':
        return CropSet(features=np.concatenate([self.features, other.features]),
                       labels=np.concatenate([self.labels, other.labels]))


class BackdoorGap(BaseModel):
    model_config = ConfigDict(frozen=True)

    benign_score: float
    triggered_score: float
    objects: int

    @property
    def gap(self) -> float:
        return self.benign_score - self.triggered_score


def sliding_windows(width: int, height: int, window_sizes: tuple[int, ...], stride: int) -> np.ndarray:
    """All square windows [x, y, s, s] that fit the image, by size, then row, then column."""
    windows = []
    for size in window_sizes:
        if size > width or size > height:
            continue
        ys, xs = np.meshgrid(np.arange(0, height - size + 1, stride), np.arange(0, width - size + 1, stride),
                             indexing='ij')
        windows.append(np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, size), np.full(xs.size, size)], axis=1))
    return np.concatenate(windows) if windows else np.zeros((0, 4), dtype=np.int64)


def window_features(image: ImageBuffer, windows: np.ndarray, grid: int) -> np.ndarray:
    """
    Point-sample every window of the channel-mean image on a grid x grid
    lattice of pixel centers and scale to [0, 1].
    """
    if windows.shape[0] == 0:
        return np.zeros((0, grid * grid))
    gray = image.data.astype(np.float64).mean(axis=2)
    steps = np.arange(grid) + 0.5
    offsets = np.floor(steps[None, :] * windows[:, 2:3] / grid).astype(np.int64)
    xs = windows[:, 0:1] + offsets
    ys = windows[:, 1:2] + offsets
    samples = gray[ys[:, :, None], xs[:, None, :]]
    return samples.reshape(windows.shape[0], grid * grid) / 255.0


def scan(architecture: DetectorArchitecture, image: ImageBuffer) -> tuple[np.ndarray, np.ndarray]:
    windows = sliding_windows(image.width, image.height, architecture.window_sizes, architecture.stride)
    return windows, window_features(image, windows, architecture.feature_grid)


def _labelled_boxes(ds: DetectionDataset, image_id: int, architecture: DetectorArchitecture,
                    grouped: dict) -> tuple[np.ndarray, np.ndarray]:
    # zero-extent boxes overlap nothing, so their windows can only become background
    anns = [ann for ann in grouped.get(image_id, []) if not ann.bbox.is_degenerate]
    boxes = np.array([ann.bbox.to_list() for ann in anns], dtype=np.float64).reshape(-1, 4)
    labels = np.array([architecture.category_ids.index(ann.category_id) + 1 for ann in anns], dtype=np.int64)
    return boxes, labels


def mine_crops(ds: DetectionDataset, image_root: Path, cfg: TrainConfig, architecture: DetectorArchitecture,
               jobs: int = 1, require_all_classes: bool = True) -> CropSet:
    """
    Positive and negative training crops of every image.

    Raises:
        TrainingError: when require_all_classes is set and a class ends up without a single positive crop.
    """
    grouped = ds.annotations_by_image()

    def mine(image) -> CropSet:
        rng = np.random.default_rng([cfg.seed, image.id])
        pixels = read_image(Path(image_root) / image.file_name)
        windows, features = scan(architecture, pixels)
        boxes, labels = _labelled_boxes(ds, image.id, architecture, grouped)
        overlaps = box_iou(windows, boxes)
        positives, positive_labels = [], []
        for j in range(boxes.shape[0]):
            candidates = np.flatnonzero(overlaps[:, j] >= POSITIVE_IOU)
            best = candidates[np.argsort(-overlaps[candidates, j], kind='stable')][:cfg.positives_per_object]
            positives.extend(best.tolist())
            positive_labels.extend([int(labels[j])] * best.size)
        background = np.flatnonzero(overlaps.max(axis=1, initial=0.0) < NEGATIVE_IOU)
        wanted = min(background.size, cfg.negative_per_positive * max(1, len(positives)))
        negatives = np.sort(rng.choice(background, size=wanted, replace=False)) if wanted else np.zeros(0, dtype=np.int64)
        chosen = np.concatenate([np.asarray(positives, dtype=np.int64), negatives])
        return CropSet(features=features[chosen].astype(np.float32),
                       labels=np.concatenate([np.asarray(positive_labels, dtype=np.int64),
                                              np.zeros(negatives.size, dtype=np.int64)]))

    per_image = parallel_map(mine, list(ds.images), jobs=jobs, desc='mining crops')
    crops = CropSet(features=np.concatenate([c.features for c in per_image] or [np.zeros((0, architecture.feature_dim), np.float32)]),
                    labels=np.concatenate([c.labels for c in per_image] or [np.zeros(0, np.int64)]))
    counts = np.bincount(crops.labels, minlength=architecture.num_outputs)
    for k, category_id in enumerate(architecture.category_ids, start=1):
        if counts[k] == 0 and require_all_classes:
            name = ds.category_name(category_id)
            logger.error("Class '%s' (id %s) has no positive crops", name, category_id)
            raise TrainingError(f"Class '{name}' (id {category_id}) has no positive training crops")
    logger.info("Mined %s crops: %s positives, %s negatives", crops.size, int(counts[1:].sum()), int(counts[0]))
    return crops


def mine_hard_negatives(model: ToyDetector, ds: DetectionDataset, image_root: Path, cfg: TrainConfig,
                        jobs: int = 1) -> CropSet:
    """Background windows (IoU < 0.3 with all boxes) the model scores as objects, the top few per image."""
    architecture = model.architecture
    grouped = ds.annotations_by_image()

    def mine(image) -> np.ndarray:
        windows, features = scan(architecture, read_image(Path(image_root) / image.file_name))
        boxes, _ = _labelled_boxes(ds, image.id, architecture, grouped)
        background = np.flatnonzero(box_iou(windows, boxes).max(axis=1, initial=0.0) < NEGATIVE_IOU)
        if background.size == 0:
            return np.zeros((0, architecture.feature_dim), dtype=np.float32)
        best = model.scores(features[background]).max(axis=1)
        confident = np.flatnonzero(best >= cfg.hard_negative_threshold)
        top = confident[np.argsort(-best[confident], kind='stable')][:cfg.hard_negatives_per_image]
        return features[background[top]].astype(np.float32)

    found = parallel_map(mine, list(ds.images), jobs=jobs, desc='hard negatives')
    features = np.concatenate(found) if found else np.zeros((0, architecture.feature_dim), dtype=np.float32)
    logger.info("Found %s hard negatives", features.shape[0])
    return CropSet(features=features, labels=np.zeros(features.shape[0], dtype=np.int64))


def mining_epochs(cfg: TrainConfig) -> set[int]:
    """Epochs (0-based) before which a hard negative round runs, spread evenly over training."""
    rounds = cfg.hard_negative_rounds
    return {e for e in (round_half_up(k * cfg.epochs / (rounds + 1)) for k in range(1, rounds + 1)) if 0 < e < cfg.epochs}


def train(ds: DetectionDataset, image_root: Path, cfg: TrainConfig, init: ToyDetector | None = None,
          on_epoch: Callable[[int, ToyDetector], None] | None = None, jobs: int | None = None) -> ToyDetector:
    """
    Train the window scorer with mini-batch momentum SGD on softmax
    cross-entropy over the background and object classes.

    With init the training continues from a copy of that model (fine-tuning).
    on_epoch is called after every epoch with the 1-based epoch number. The
    result is identical for identical inputs and seed, for any jobs value.
    """
    jobs = jobs or BadBox().get_settings().jobs
    if init is not None:
        model = init.copy()
        if set(model.architecture.category_ids) != set(ds.category_ids()):
            raise TrainingError(f"Model classes {model.architecture.category_ids} differ from dataset classes {ds.category_ids()}")
    else:
        model = ToyDetector.initialize(cfg.architecture(tuple(ds.category_ids())), seed=cfg.seed)
    crops = mine_crops(ds, image_root, cfg, model.architecture, jobs=jobs)

    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(value) for name, value in model.params().items()}
    hard_rounds = mining_epochs(cfg)
    history = []
    for epoch in progress(range(cfg.epochs), desc='training', total=cfg.epochs):
        if epoch in hard_rounds:
            crops = crops.extend(mine_hard_negatives(model, ds, image_root, cfg, jobs=jobs))
        order = rng.permutation(crops.size)
        total = 0.0
        for start in range(0, crops.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(crops.features[batch].astype(np.float64), crops.labels[batch])
            total += loss * batch.size
            for name, param in model.params().items():
                decay = cfg.weight_decay * param if name.startswith('w') else 0.0
                velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * (grads[name] + decay)
                param += velocity[name]
        history.append(total / max(crops.size, 1))
        logger.debug("Epoch %s/%s: loss %.5f on %s crops", epoch + 1, cfg.epochs, history[-1], crops.size)
        if on_epoch is not None:
            on_epoch(epoch + 1, model)

    model.loss_history = model.loss_history + history
    model.train_config = cfg.model_dump(mode='json')
    logger.info("Trained for %s epochs, final loss %.5f", cfg.epochs, history[-1])
    return model


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thr: float) -> list[int]:
    """Greedy non-maximum suppression. Returns kept indices, best score first; equal scores keep input order."""
    order = list(np.argsort(-np.asarray(scores, dtype=np.float64), kind='stable'))
    overlaps = box_iou(boxes, boxes)
    keep = []
    while order:
        best = order.pop(0)
        keep.append(int(best))
        order = [i for i in order if overlaps[best, i] <= iou_thr]
    return keep


def detect(model: ToyDetector, image: ImageBuffer, score_thr: float = 0.5, nms_iou: float = 0.3,
           max_detections: int = MAX_DETECTIONS, image_id: int = 0) -> list[DetectionResult]:
    windows, features = scan(model.architecture, image)
    if windows.shape[0] == 0:
        return []
    scores = model.scores(features)
    found = []
    for j, category_id in enumerate(model.architecture.category_ids):
        candidates = np.flatnonzero(scores[:, j] >= score_thr)
        for k in nms(windows[candidates], scores[candidates, j], nms_iou):
            index = candidates[k]
            found.append((float(scores[index, j]), category_id, windows[index]))
    found.sort(key=lambda item: -item[0])
    return [DetectionResult(image_id=image_id, category_id=category_id, bbox=[float(v) for v in window], score=score)
            for score, category_id, window in found[:max_detections]]


def detect_dataset(model: ToyDetector, ds: DetectionDataset, image_root: Path, params: DetectParams | None = None,
                   jobs: int | None = None) -> list[DetectionResult]:
    params = params or DetectParams()
    jobs = jobs or BadBox().get_settings().jobs

    def run(image) -> list[DetectionResult]:
        return detect(model, read_image(Path(image_root) / image.file_name), params.score_thr, params.nms_iou,
                      params.max_detections, image_id=image.id)

    return [det for dets in parallel_map(run, list(ds.images), jobs=jobs, desc='detecting') for det in dets]


def evaluate_model(model: ToyDetector, ds: DetectionDataset, image_root: Path, params: DetectParams | None = None,
                   jobs: int | None = None) -> EvalReport:
    return evaluate(ds, detect_dataset(model, ds, image_root, params, jobs=jobs), jobs=jobs)


def backdoor_gap(model: ToyDetector, ds: DetectionDataset, benign_root: Path, triggered_root: Path) -> BackdoorGap:
    """
    Mean class score of the window best aligned with each object, on the
    benign images and on the same images with every object triggered.
    """
    grouped = ds.annotations_by_image()
    benign, triggered = [], []
    for image in ds.images:
        boxes, labels = _labelled_boxes(ds, image.id, model.architecture, grouped)
        if boxes.shape[0] == 0:
            continue
        scans = [scan(model.architecture, read_image(Path(root) / image.file_name))
                 for root in (benign_root, triggered_root)]
        if any(windows.shape[0] == 0 for windows, _ in scans):
            continue
        for (windows, features), sink in zip(scans, (benign, triggered)):
            best = np.argmax(box_iou(windows, boxes), axis=0)
            sink.extend(model.scores(features[best])[np.arange(boxes.shape[0]), labels - 1].tolist())
    if not benign:
        return BackdoorGap(benign_score=0.0, triggered_score=0.0, objects=0)
    return BackdoorGap(benign_score=float(np.mean(benign)), triggered_score=float(np.mean(triggered)), objects=len(benign))
