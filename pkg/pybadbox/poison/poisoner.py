import shutil
from pathlib import Path
import numpy as np
from pydantic import ValidationError
from pybadbox import BadBox
from pybadbox.constants import ANNOTATIONS_FILE, IMAGES_DIR, MANIFEST_FILE
from pybadbox.data.coco_io import parse_json, dataset_digest, save_dataset
from pybadbox.data.models import Annotation, BBox, DetectionDataset
from pybadbox.exceptions import DatasetValidationError, PoisoningError
from pybadbox.logs import get_logger
from pybadbox.poison.models import PoisonConfig, PoisonManifest
from pybadbox.trigger.blend import stamp_box
from pybadbox.trigger.image_io import read_image, write_image
from pybadbox.trigger.patterns import TriggerSpec
from pybadbox.utils import parallel_map, round_half_up, write_json

logger = get_logger(__name__)


def is_eligible(ann: Annotation) -> bool:
    """Crowd regions and boxes without area are never poisoned."""
    return ann.iscrowd == 0 and ann.area > 0 and not ann.bbox.is_degenerate


def select_poison_set(ds: DetectionDataset, cfg: PoisonConfig) -> PoisonManifest:
    """
    Draw the poisoned subset: a uniform sample without replacement, seeded by
    cfg.seed, of round(rate * N) eligible annotations. With
    selection_unit='image' the draw is over images holding an eligible
    annotation and every eligible annotation of a drawn image is poisoned.
    """
    if cfg.mode != 'train':
        raise ValueError(f"select_poison_set needs a train-mode config, got mode '{cfg.mode}'")
    rng = np.random.default_rng(cfg.seed)
    eligible = sorted(ann.id for ann in ds.annotations if is_eligible(ann))

    if cfg.selection_unit == 'image':
        owners = {ann.id: ann.image_id for ann in ds.annotations}
        images = sorted({owners[ann_id] for ann_id in eligible})
        count = round_half_up(cfg.rate * len(images))
        drawn = {int(i) for i in rng.choice(images, size=count, replace=False)} if count else set()
        chosen = [ann_id for ann_id in eligible if owners[ann_id] in drawn]
        population = len(images)
    else:
        count = round_half_up(cfg.rate * len(eligible))
        chosen = [int(i) for i in rng.choice(eligible, size=count, replace=False)] if count else []
        population = len(eligible)

    if count == 0 and cfg.rate > 0:
        logger.warning("Poisoning rate %s of %s eligible %ss selects nothing, manifest is empty",
                       cfg.rate, population, cfg.selection_unit)
    logger.info("Selected %s of %s eligible annotations for poisoning", len(chosen), len(eligible))
    return PoisonManifest(seed=cfg.seed, rate=cfg.rate, trigger_digest=cfg.trigger.digest(),
                          source_digest=dataset_digest(ds), poisoned_annotation_ids=tuple(chosen),
                          selection_unit=cfg.selection_unit)


def apply_ga(a: Annotation) -> Annotation:
    """Collapse the box to its center: [x, y, w, h] becomes [x + w/2, y + h/2, 0, 0]. Class and ids are kept."""
    if a.bbox.w == 0 and a.bbox.h == 0 and a.area == 0:
        return a
    center = BBox(x=a.bbox.x + a.bbox.w / 2, y=a.bbox.y + a.bbox.h / 2, w=0, h=0)
    return a.model_copy(update={'bbox': center, 'area': 0.0})


def missing_images(ds: DetectionDataset, image_root: Path) -> list[str]:
    return [str(Path(image_root) / image.file_name) for image in ds.images
            if not (Path(image_root) / image.file_name).is_file()]


def _stamp_images(ds: DetectionDataset, image_root: Path, trigger: TriggerSpec, stamped_ids: set[int],
                  out_root: Path, jobs: int) -> list[int]:
    """Write every image under out_root/images. Returns ids of annotations whose trigger fell outside the image."""
    targets: dict[int, list[Annotation]] = {}
    for ann in sorted(ds.annotations, key=lambda a: a.id):
        if ann.id in stamped_ids:
            targets.setdefault(ann.image_id, []).append(ann)

    def process(image) -> list[int]:
        src = Path(image_root) / image.file_name
        dst = Path(out_root) / IMAGES_DIR / image.file_name
        anns = targets.get(image.id)
        if not anns:
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
            return []
        pixels = read_image(src)
        unstamped = []
        for ann in anns:
            result = stamp_box(pixels, trigger, ann.bbox)
            if result.skipped:
                unstamped.append(ann.id)
            pixels = result.image
        write_image(pixels, dst)
        return unstamped

    per_image = parallel_map(process, list(ds.images), jobs=jobs, desc='stamping')
    return [ann_id for ids in per_image for ann_id in ids]


def poison_dataset(ds: DetectionDataset, image_root: Path, cfg: PoisonConfig, out_root: Path,
                   jobs: int | None = None) -> tuple[DetectionDataset, PoisonManifest]:
    """
    Build the poisoned dataset under out_root.

    Selected annotations get the trigger stamped at their box center (several
    on one image are stamped in ascending annotation id) and are then
    collapsed with apply_ga. Images without a selected annotation are copied
    byte for byte. The output is out_root/images/<file_name>,
    out_root/annotations.json and out_root/manifest.json.

    Raises:
        PoisoningError: when image files are missing (all of them are listed) or the output cannot be written.
    """
    image_root, out_root = Path(image_root), Path(out_root)
    jobs = jobs or BadBox().get_settings().jobs
    missing = missing_images(ds, image_root)
    if missing:
        logger.error("%s image files are missing under %s", len(missing), image_root)
        raise PoisoningError("Missing image files", missing)

    if cfg.mode == 'test_full':
        stamped = [ann.id for ann in ds.annotations]
        manifest = PoisonManifest(seed=cfg.seed, rate=1.0, trigger_digest=cfg.trigger.digest(),
                                  source_digest=dataset_digest(ds), poisoned_annotation_ids=tuple(stamped),
                                  mode='test_full', selection_unit=cfg.selection_unit)
        poisoned = ds
    else:
        manifest = select_poison_set(ds, cfg)
        chosen = set(manifest.poisoned_annotation_ids)
        annotations = [apply_ga(ann) if ann.id in chosen else ann for ann in ds.annotations]
        if cfg.drop_degenerate:
            annotations = [ann for ann in annotations if not ann.bbox.is_degenerate]
        poisoned = ds.with_annotations(annotations)

    try:
        unstamped = _stamp_images(ds, image_root, cfg.trigger, set(manifest.poisoned_annotation_ids), out_root, jobs)
        save_dataset(poisoned, out_root / ANNOTATIONS_FILE)
        manifest = manifest.model_copy(update={'output_digest': dataset_digest(poisoned),
                                               'unstamped_annotation_ids': tuple(sorted(unstamped))})
        save_manifest(manifest, out_root / MANIFEST_FILE)
    except OSError as e:
        logger.error("Unable to write poisoned dataset to %s: %s", out_root, e)
        raise PoisoningError(f"Unable to write poisoned dataset to {out_root}: {e}") from e

    logger.info("Poisoned %s annotations (%s mode) into %s", len(manifest.poisoned_annotation_ids), cfg.mode, out_root)
    return poisoned, manifest


def poison_test_set(ds: DetectionDataset, image_root: Path, trigger: TriggerSpec, out_root: Path,
                    jobs: int | None = None) -> DetectionDataset:
    """Stamp every object of ds. The ground truth keeps its original boxes so AP counts the missed objects."""
    cfg = PoisonConfig(rate=1.0, trigger=trigger, mode='test_full')
    poisoned, _ = poison_dataset(ds, image_root, cfg, out_root, jobs=jobs)
    return poisoned


def save_manifest(manifest: PoisonManifest, path: Path) -> None:
    write_json(manifest.to_record(), Path(path), indent=2)


def load_manifest(path: Path) -> PoisonManifest:
    path = Path(path)
    try:
        return PoisonManifest.model_validate(parse_json(path.read_bytes(), str(path)))
    except ValidationError as e:
        logger.error("Invalid manifest %s: %s", path, e)
        raise DatasetValidationError(f"Invalid manifest {path}: {e}")
