from contextlib import contextmanager
from pathlib import Path
from typing import Literal
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pybadbox import BadBox
from pybadbox.bench.defenses import EvalSuite, finetune, prune
from pybadbox.bench.detector import ToyDetector, save_model
from pybadbox.bench.synthetic import SynthConfig, generate_synthetic
from pybadbox.bench.training import DetectParams, TrainConfig, backdoor_gap, evaluate_model, train
from pybadbox.constants import BUILTIN_PATTERNS, DEFAULT_POISON_RATE, DEFAULT_TRIGGER_SIZE, FINETUNE_FRACTION, IMAGES_DIR
from pybadbox.data.models import DetectionDataset
from pybadbox.evaluation.ap_eval import EvalReport
from pybadbox.evaluation.report import render_study_table, render_sweep
from pybadbox.exceptions import BadBoxError, StudyError
from pybadbox.logs import get_logger
from pybadbox.poison.models import PoisonConfig
from pybadbox.poison.poisoner import poison_dataset, poison_test_set
from pybadbox.trigger.patterns import TriggerSpec, resolve_trigger
from pybadbox.utils import format_number, round_half_up, write_csv, write_json

logger = get_logger(__name__)

METRIC_COLUMNS = ['benign_mAP', 'poisoned_mAP']


class StudyConfig(BaseModel):
    """Everything the desk-scale attack study needs. Identical configs give identical outputs."""
    model_config = ConfigDict(frozen=True)

    train_images: int = Field(default=2000, ge=1)
    test_images: int = Field(default=200, ge=2)
    rate: float = Field(default=DEFAULT_POISON_RATE, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    trigger: str = 'white'
    noise_seed: int | None = None
    trigger_size: tuple[float, float] = DEFAULT_TRIGGER_SIZE
    synth: SynthConfig = SynthConfig()
    train: TrainConfig = TrainConfig()
    detect: DetectParams = DetectParams()
    sweep_rates: tuple[float, ...] = ()
    sweep_patterns: tuple[str, ...] = ()
    test_trigger_scales: tuple[float, ...] = ()
    defense: Literal['finetune', 'prune'] | None = None
    fractions: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    finetune_epochs: int = Field(default=10, ge=1)
    finetune_fraction: float = Field(default=FINETUNE_FRACTION, gt=0.0, lt=1.0)

    @field_validator('sweep_rates')
    @classmethod
    def rates_in_range(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(not 0.0 <= r <= 1.0 for r in value):
            raise ValueError(f"Sweep rates must lie in [0, 1], got {value}")
        return value

    @field_validator('sweep_patterns')
    @classmethod
    def known_patterns(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        unknown = [p for p in value if p not in BUILTIN_PATTERNS]
        if unknown:
            raise ValueError(f"Unknown trigger patterns {unknown}, choose from {BUILTIN_PATTERNS}")
        return value

    @field_validator('test_trigger_scales')
    @classmethod
    def scales_in_range(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(not 0.0 < s <= 1.0 for s in value):
            raise ValueError(f"Trigger scales must lie in (0, 1], got {value}")
        return value

    @field_validator('fractions')
    @classmethod
    def fractions_in_range(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(not 0.0 <= f < 1.0 for f in value):
            raise ValueError(f"Prune fractions must lie in [0, 1), got {value}")
        return value


class StudyRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    test_set: str
    report: EvalReport


class StudyResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    table: list[StudyRow]
    backdoor_gap: dict[str, dict[str, float]] = Field(default_factory=dict)
    sweeps: dict[str, list[dict]] = Field(default_factory=dict)

    def report(self, model: str, test_set: str) -> EvalReport:
        for row in self.table:
            if row.model == model and row.test_set == test_set:
                return row.report
        raise KeyError((model, test_set))

    def to_record(self) -> dict:
        return {
            'table': [{'model': row.model, 'test_set': row.test_set, **row.report.to_record()} for row in self.table],
            'backdoor_gap': self.backdoor_gap,
            'sweeps': self.sweeps,
        }


@contextmanager
def stage(name: str):
    logger.info("Study stage: %s", name)
    try:
        yield
    except (BadBoxError, OSError, ValueError) as e:
        if isinstance(e, StudyError):
            raise
        logger.error("Study stage '%s' failed: %s", name, e)
        raise StudyError(name, e) from e


def split_finetune(ds: DetectionDataset, fraction: float, seed: int) -> tuple[DetectionDataset, DetectionDataset]:
    """Draw round(fraction * images) test images for fine-tuning. Returns (fine-tuning subset, evaluation set)."""
    ids = sorted(image.id for image in ds.images)
    count = round_half_up(fraction * len(ids))
    rng = np.random.default_rng([seed, len(ids)])
    held = {int(i) for i in rng.permutation(ids)[:count]}
    return ds.subset(held), ds.subset([i for i in ids if i not in held])


class _Study:
    """Caches datasets and trained models so sweeps reuse what the main experiment built."""

    def __init__(self, cfg: StudyConfig, out_root: Path, jobs: int):
        self.cfg = cfg
        self.out_root = out_root
        self.data_root = out_root / 'data'
        self.jobs = jobs
        self.models: dict[tuple[str, float], ToyDetector] = {}
        self.poisoned_tests: dict[str, tuple[DetectionDataset, Path]] = {}

    def trigger(self, name: str, scale: tuple[float, float] | None = None) -> TriggerSpec:
        seed = self.cfg.noise_seed if self.cfg.noise_seed is not None else self.cfg.seed
        return resolve_trigger(name, seed=seed, relative_size=scale or self.cfg.trigger_size)

    def generate(self) -> None:
        cfg = self.cfg
        with stage('generate'):
            self.train_ds = generate_synthetic(
                cfg.synth.model_copy(update={'num_images': cfg.train_images, 'seed': cfg.seed}),
                self.data_root / 'train', jobs=self.jobs)
            test_ds = generate_synthetic(
                cfg.synth.model_copy(update={'num_images': cfg.test_images, 'seed': cfg.seed + 1,
                                             'first_image_id': cfg.train_images + 1,
                                             'first_annotation_id': len(self.train_ds.annotations) + 1}),
                self.data_root / 'test', jobs=self.jobs)
            self.train_root = self.data_root / 'train' / IMAGES_DIR
            self.test_root = self.data_root / 'test' / IMAGES_DIR
            self.finetune_ds, self.eval_ds = split_finetune(test_ds, cfg.finetune_fraction, cfg.seed)

    def poisoned_test(self, key: str, trigger: TriggerSpec) -> tuple[DetectionDataset, Path]:
        if key not in self.poisoned_tests:
            with stage(f'poison test set ({key})'):
                out = self.data_root / f'test_poisoned_{key}'
                ds = poison_test_set(self.eval_ds, self.test_root, trigger, out, jobs=self.jobs)
                self.poisoned_tests[key] = (ds, out / IMAGES_DIR)
        return self.poisoned_tests[key]

    def vanilla(self) -> ToyDetector:
        if ('vanilla', 0.0) not in self.models:
            with stage('train vanilla'):
                model = train(self.train_ds, self.train_root, self.cfg.train, jobs=self.jobs)
                save_model(model, self.out_root / 'models' / 'vanilla.json')
                self.models[('vanilla', 0.0)] = model
        return self.models[('vanilla', 0.0)]

    def attacked(self, pattern: str, rate: float) -> ToyDetector:
        key = (pattern, rate)
        if key not in self.models:
            name = f'{Path(pattern).stem}_{format_number(rate)}'
            with stage(f'poison training set ({name})'):
                out = self.data_root / f'train_poisoned_{name}'
                poisoned, _ = poison_dataset(self.train_ds, self.train_root,
                                             PoisonConfig(rate=rate, seed=self.cfg.seed, trigger=self.trigger(pattern)),
                                             out, jobs=self.jobs)
            with stage(f'train attacked ({name})'):
                model = train(poisoned, out / IMAGES_DIR, self.cfg.train, jobs=self.jobs)
                save_model(model, self.out_root / 'models' / f'attacked_{name}.json')
                self.models[key] = model
        return self.models[key]

    def score(self, model: ToyDetector, ds: DetectionDataset, root: Path, label: str) -> EvalReport:
        with stage(f'evaluate {label}'):
            return evaluate_model(model, ds, root, self.cfg.detect, jobs=self.jobs)

    def suite(self, key: str, trigger: TriggerSpec) -> EvalSuite:
        poisoned, poisoned_root = self.poisoned_test(key, trigger)
        return EvalSuite(benign=self.eval_ds, benign_root=self.test_root, poisoned=poisoned,
                         poisoned_root=poisoned_root, params=self.cfg.detect)


def run_study(cfg: StudyConfig, out_root: Path, jobs: int | None = None) -> StudyResult:
    """
    Run the desk-scale attack study under out_root.

    The main experiment trains a vanilla and an attacked detector and scores
    both on the benign test set and on its fully triggered twin. Optional
    parts: the poisoning-rate sweep, the trigger-pattern sweep, test-time
    trigger scales, and the fine-tuning or pruning defense. The held-out
    fine-tuning images are never evaluated.

    Raises:
        StudyError: naming the stage that failed.
    """
    out_root = Path(out_root)
    jobs = jobs or BadBox().get_settings().jobs
    study = _Study(cfg, out_root, jobs)
    with stage('resolve trigger'):
        main_trigger = study.trigger(cfg.trigger)
    study.generate()

    main_key = Path(cfg.trigger).stem
    poisoned_ds, poisoned_root = study.poisoned_test(main_key, main_trigger)
    vanilla = study.vanilla()
    attacked = study.attacked(cfg.trigger, cfg.rate)
    table = []
    for label, model in (('Vanilla', vanilla), ('Attacked', attacked)):
        table.append(StudyRow(model=label, test_set='Benign',
                              report=study.score(model, study.eval_ds, study.test_root, f'{label} on benign')))
        table.append(StudyRow(model=label, test_set='Poisoned',
                              report=study.score(model, poisoned_ds, poisoned_root, f'{label} on poisoned')))

    with stage('backdoor gap'):
        gaps = {}
        for label, model in (('vanilla', vanilla), ('attacked', attacked)):
            gap = backdoor_gap(model, study.eval_ds, study.test_root, poisoned_root)
            gaps[label] = {'benign_score': gap.benign_score, 'triggered_score': gap.triggered_score, 'gap': gap.gap}

    sweeps: dict[str, list[dict]] = {}
    if cfg.sweep_rates:
        rows = []
        for rate in cfg.sweep_rates:
            model = study.attacked(cfg.trigger, rate)
            rows.append({'rate': rate,
                         'benign_mAP': study.score(model, study.eval_ds, study.test_root, f'rate {rate} benign').map,
                         'poisoned_mAP': study.score(model, poisoned_ds, poisoned_root, f'rate {rate} poisoned').map})
        sweeps['rates'] = rows

    if cfg.sweep_patterns:
        rows = []
        for pattern in cfg.sweep_patterns:
            test_ds, test_root = study.poisoned_test(pattern, study.trigger(pattern))
            model = study.attacked(pattern, cfg.rate)
            rows.append({
                'pattern': pattern,
                'vanilla_benign_mAP': table[0].report.map,
                'vanilla_poisoned_mAP': study.score(vanilla, test_ds, test_root, f'vanilla on {pattern}').map,
                'benign_mAP': study.score(model, study.eval_ds, study.test_root, f'{pattern} benign').map,
                'poisoned_mAP': study.score(model, test_ds, test_root, f'{pattern} poisoned').map,
            })
        sweeps['patterns'] = rows

    if cfg.test_trigger_scales:
        rows = []
        for scale in cfg.test_trigger_scales:
            key = f'{main_key}_scale_{format_number(scale)}'
            test_ds, test_root = study.poisoned_test(key, study.trigger(cfg.trigger, (scale, scale)))
            rows.append({
                'scale': scale,
                'vanilla_poisoned_mAP': study.score(vanilla, test_ds, test_root, f'vanilla at scale {scale}').map,
                'benign_mAP': table[2].report.map,
                'poisoned_mAP': study.score(attacked, test_ds, test_root, f'attacked at scale {scale}').map,
            })
        sweeps['scales'] = rows

    if cfg.defense == 'finetune':
        with stage('finetune'):
            ft_cfg = TrainConfig.model_validate({**cfg.train.model_dump(), 'epochs': cfg.finetune_epochs})
            _, trajectory = finetune(attacked, study.finetune_ds, study.test_root, ft_cfg,
                                     study.suite(main_key, main_trigger), jobs=jobs)
        start = {'epoch': 0, 'benign_mAP': table[2].report.map, 'poisoned_mAP': table[3].report.map}
        sweeps['finetune'] = [start] + [{'epoch': int(p.step), 'benign_mAP': p.benign_map, 'poisoned_mAP': p.poisoned_map}
                                        for p in trajectory]
    elif cfg.defense == 'prune':
        with stage('prune'):
            trajectory = prune(attacked, study.finetune_ds, study.test_root, list(cfg.fractions),
                               study.suite(main_key, main_trigger), cfg=cfg.train, jobs=jobs)
        sweeps['prune'] = [{'fraction': p.step, 'benign_mAP': p.benign_map, 'poisoned_mAP': p.poisoned_map}
                           for p in trajectory]

    result = StudyResult(table=table, backdoor_gap=gaps, sweeps=sweeps)
    with stage('write outputs'):
        write_outputs(result, out_root)
    return result


SWEEP_LAYOUT = {
    'rates': ('Poisoning rate sweep', ['rate'] + METRIC_COLUMNS),
    'patterns': ('Trigger pattern sweep', ['pattern', 'vanilla_benign_mAP', 'vanilla_poisoned_mAP'] + METRIC_COLUMNS),
    'scales': ('Test-time trigger scale', ['scale', 'vanilla_poisoned_mAP'] + METRIC_COLUMNS),
    'finetune': ('Fine-tuning defense', ['epoch'] + METRIC_COLUMNS),
    'prune': ('Pruning defense', ['fraction'] + METRIC_COLUMNS),
}


def write_outputs(result: StudyResult, out_root: Path) -> None:
    """study.json, one CSV per sweep, and table.txt with every table in plain text."""
    write_json(result.to_record(), out_root / 'study.json', indent=2)
    text = [render_study_table([(row.model, row.test_set, row.report) for row in result.table])]
    for name, rows in result.sweeps.items():
        title, columns = SWEEP_LAYOUT[name]
        write_csv(rows, out_root / f'{name}.csv', columns)
        text.append(render_sweep(title, columns, rows))
    (out_root / 'table.txt').write_text('\n'.join(text), encoding='utf-8')
    logger.info("Study outputs written to %s", out_root)
