from pathlib import Path
import numpy as np
from pydantic import BaseModel, ConfigDict
from pybadbox import BadBox
from pybadbox.bench.detector import ToyDetector
from pybadbox.bench.training import DetectParams, TrainConfig, evaluate_model, mine_crops, train
from pybadbox.data.models import DetectionDataset
from pybadbox.evaluation.ap_eval import EvalReport
from pybadbox.logs import get_logger
from pybadbox.utils import round_half_up

logger = get_logger(__name__)


class EvalSuite(BaseModel):
    """The benign test set and its fully triggered twin, scored together after every defense step."""
    model_config = ConfigDict(frozen=True)

    benign: DetectionDataset
    benign_root: Path
    poisoned: DetectionDataset
    poisoned_root: Path
    params: DetectParams = DetectParams()

    def run(self, model: ToyDetector, jobs: int | None = None) -> tuple[EvalReport, EvalReport]:
        return (evaluate_model(model, self.benign, self.benign_root, self.params, jobs=jobs),
                evaluate_model(model, self.poisoned, self.poisoned_root, self.params, jobs=jobs))


class TrajectoryPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: float
    benign_map: float
    poisoned_map: float


def finetune(model: ToyDetector, clean_subset: DetectionDataset, image_root: Path, cfg: TrainConfig,
             suite: EvalSuite, jobs: int | None = None) -> tuple[ToyDetector, list[TrajectoryPoint]]:
    """
    Keep training on clean data only, with the training learning rate. The
    trajectory has one point per epoch; the clean subset must not overlap the
    evaluation images.
    """
    jobs = jobs or BadBox().get_settings().jobs
    overlap = {image.id for image in clean_subset.images} & {image.id for image in suite.benign.images}
    if overlap:
        raise ValueError(f"Fine-tuning images overlap the evaluation set: {sorted(overlap)}")
    trajectory = []

    def record(epoch: int, current: ToyDetector) -> None:
        benign, poisoned = suite.run(current, jobs=jobs)
        trajectory.append(TrajectoryPoint(step=epoch, benign_map=benign.map, poisoned_map=poisoned.map))
        logger.info("Fine-tuning epoch %s: benign mAP %.4f, poisoned mAP %.4f", epoch, benign.map, poisoned.map)

    tuned = train(clean_subset, image_root, cfg, init=model, on_epoch=record, jobs=jobs)
    return tuned, trajectory


def unit_ranking(model: ToyDetector, clean_subset: DetectionDataset, image_root: Path, cfg: TrainConfig,
                 jobs: int = 1) -> np.ndarray:
    """Hidden units ordered by mean activation over clean crops, lowest first."""
    crops = mine_crops(clean_subset, image_root, cfg, model.architecture, jobs=jobs, require_all_classes=False)
    activation = model.hidden_activations(crops.features.astype(np.float64)).mean(axis=0)
    return np.argsort(activation, kind='stable')


def prune(model: ToyDetector, clean_subset: DetectionDataset, image_root: Path, prune_fractions: list[float],
          suite: EvalSuite, cfg: TrainConfig | None = None, jobs: int | None = None) -> list[TrajectoryPoint]:
    """
    Zero the round(f * H) least active hidden units for every fraction f and
    score both test sets, without retraining.
    """
    if any(not 0.0 <= f < 1.0 for f in prune_fractions):
        raise ValueError(f"Prune fractions must lie in [0, 1), got {prune_fractions}")
    jobs = jobs or BadBox().get_settings().jobs
    cfg = cfg or TrainConfig()
    ranking = unit_ranking(model, clean_subset, image_root, cfg, jobs=jobs)
    trajectory = []
    for fraction in prune_fractions:
        count = round_half_up(fraction * model.architecture.hidden)
        pruned = model.pruned(ranking[:count]) if count else model
        benign, poisoned = suite.run(pruned, jobs=jobs)
        trajectory.append(TrajectoryPoint(step=fraction, benign_map=benign.map, poisoned_map=poisoned.map))
        logger.info("Pruned %s of %s units: benign mAP %.4f, poisoned mAP %.4f",
                    count, model.architecture.hidden, benign.map, poisoned.map)
    return trajectory
