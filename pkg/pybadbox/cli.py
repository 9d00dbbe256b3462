import argparse
import shutil
import sys
from pathlib import Path
from pydantic import ValidationError
from pybadbox import BadBox, __version__
from pybadbox.bench.study import StudyConfig, run_study
from pybadbox.bench.synthetic import SynthConfig, generate_synthetic
from pybadbox.bench.training import TrainConfig
from pybadbox.constants import (ANNOTATIONS_FILE, BUILTIN_PATTERNS, DEFAULT_POISON_RATE, EXIT_OK, EXIT_RUNTIME,
                                EXIT_USAGE, EXIT_VALIDATION, RUN_FILE)
from pybadbox.data.coco_io import load_dataset, load_detections
from pybadbox.evaluation.ap_eval import EvalConfig, evaluate
from pybadbox.evaluation.report import render_study_table, render_table, save_report
from pybadbox.exceptions import (BadBoxError, DatasetParseError, DatasetValidationError, EvaluationError,
                                 PoisoningError, TriggerError)
from pybadbox.logs import get_logger, set_log_level
from pybadbox.poison.models import PoisonConfig
from pybadbox.poison.poisoner import poison_dataset
from pybadbox.settings import Settings
from pybadbox.trigger.patterns import resolve_trigger
from pybadbox.utils import file_digest, write_json

logger = get_logger(__name__)

VALIDATION_ERRORS = (DatasetParseError, DatasetValidationError, TriggerError, EvaluationError, ValidationError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _size(text: str) -> tuple[float, float]:
    values = _floats(text)
    if len(values) == 1:
        return values[0], values[0]
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected 'fraction' or 'width,height', got '{text}'")
    return values


def _existing(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def _trigger_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--trigger', default='white',
                        help=f"builtin pattern ({', '.join(BUILTIN_PATTERNS)}) or path to a PNG")
    parser.add_argument('--noise-seed', type=int, default=None, help="seed of the noise pattern (defaults to --seed)")
    parser.add_argument('--trigger-size', type=_size, default=(0.10, 0.10),
                        help="patch size relative to the box, 'f' or 'w,h' (default 0.1,0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='badbox', description="Poison-only untargeted backdoor toolkit for object detection")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--seed', type=int, default=None, help="random seed (env BADBOX_DEFAULT_SEED)")
    parser.add_argument('--jobs', type=int, default=None, help="parallel workers (env BADBOX_JOBS)")
    parser.add_argument('--out', type=Path, default=None, help="output directory (env BADBOX_OUT_DIR)")
    parser.add_argument('--log-level', type=str.upper, default=None,
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'), help="(env BADBOX_LOG_LEVEL)")
    commands = parser.add_subparsers(dest='command', required=True)

    generate = commands.add_parser('generate', help="write a synthetic shapes dataset")
    generate.add_argument('--num-images', type=int, default=100)
    generate.add_argument('--image-size', type=int, default=64)
    generate.add_argument('--objects', type=int, nargs=2, default=(1, 3), metavar=('MIN', 'MAX'))
    generate.add_argument('--noise-level', type=int, default=40)
    generate.set_defaults(handler=cmd_generate)

    poison = commands.add_parser('poison', help="poison a COCO-style dataset")
    poison.add_argument('--annotations', type=Path, required=True)
    poison.add_argument('--images', type=Path, required=True, help="directory the file_name entries resolve under")
    poison.add_argument('--rate', type=float, default=DEFAULT_POISON_RATE)
    _trigger_flags(poison)
    poison.add_argument('--full-test', action='store_true', help="stamp every object and keep the ground truth")
    poison.add_argument('--select-images', action='store_true', help="draw images instead of annotations")
    poison.add_argument('--drop-degenerate', action='store_true', help="drop zero-extent boxes from the output")
    poison.set_defaults(handler=cmd_poison)

    evaluation = commands.add_parser('eval', help="score a results file against ground truth")
    evaluation.add_argument('--annotations', type=Path, required=True)
    evaluation.add_argument('--results', type=Path, required=True)
    evaluation.set_defaults(handler=cmd_eval)

    study = commands.add_parser('study', help="run the desk-scale attack study")
    study.add_argument('--train-images', type=int, default=2000)
    study.add_argument('--test-images', type=int, default=200)
    study.add_argument('--rate', type=float, default=DEFAULT_POISON_RATE)
    study.add_argument('--epochs', type=int, default=TrainConfig().epochs)
    _trigger_flags(study)
    study.add_argument('--sweep-rates', type=_floats, default=())
    study.add_argument('--sweep-patterns', type=lambda text: tuple(p for p in text.split(',') if p), default=())
    study.add_argument('--test-trigger-scales', type=_floats, default=())
    study.add_argument('--defense', choices=('finetune', 'prune'), default=None)
    study.add_argument('--fractions', type=_floats, default=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5))
    study.add_argument('--finetune-epochs', type=int, default=10)
    study.set_defaults(handler=cmd_study)
    return parser


def write_run(out: Path, args: argparse.Namespace, config: dict, inputs: list[Path]) -> None:
    """run.json: the command, every resolved setting and the digest of every input file."""
    write_json({
        'command': args.command,
        'version': __version__,
        'seed': args.seed,
        'jobs': args.jobs,
        'config': config,
        'inputs': {str(path): file_digest(path) for path in inputs if Path(path).is_file()},
    }, out / RUN_FILE, indent=2)


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = SynthConfig(num_images=args.num_images, image_size=args.image_size, objects_per_image=tuple(args.objects),
                      noise_level=args.noise_level, seed=args.seed)
    ds = generate_synthetic(cfg, args.out, jobs=args.jobs)
    write_run(args.out, args, cfg.model_dump(mode='json'), [])
    print(f"{len(ds.images)} images, {len(ds.annotations)} annotations written to {args.out}")
    return EXIT_OK


def cmd_poison(args: argparse.Namespace) -> int:
    annotations = _existing(args.annotations, "Annotations file")
    _existing(args.images, "Image directory")
    trigger = resolve_trigger(args.trigger, seed=args.noise_seed if args.noise_seed is not None else args.seed,
                              relative_size=args.trigger_size)
    cfg = PoisonConfig(rate=args.rate, seed=args.seed, trigger=trigger,
                       mode='test_full' if args.full_test else 'train',
                       selection_unit='image' if args.select_images else 'annotation',
                       drop_degenerate=args.drop_degenerate)
    ds = load_dataset(annotations)
    _, manifest = poison_dataset(ds, args.images, cfg, args.out, jobs=args.jobs)
    if cfg.mode == 'train' and not manifest.poisoned_annotation_ids and not cfg.drop_degenerate:
        # nothing changed: hand back the input file itself
        shutil.copyfile(annotations, Path(args.out) / ANNOTATIONS_FILE)
    config = cfg.model_dump(mode='json', exclude={'trigger'})
    config['trigger'] = {'source': args.trigger, **trigger.describe()}
    write_run(args.out, args, config, [annotations])
    print(f"{len(manifest.poisoned_annotation_ids)} annotations poisoned ({cfg.mode}), output in {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    annotations = _existing(args.annotations, "Annotations file")
    results = _existing(args.results, "Results file")
    cfg = EvalConfig()
    report = evaluate(load_dataset(annotations), load_detections(results), cfg, jobs=args.jobs)
    table = render_table(report)
    save_report(report, args.out / 'report.json')
    (args.out / 'table.txt').write_text(table, encoding='utf-8')
    write_run(args.out, args, cfg.to_record(), [annotations, results])
    print(table, end='')
    return EXIT_OK


def cmd_study(args: argparse.Namespace) -> int:
    base = TrainConfig()
    cfg = StudyConfig(
        train_images=args.train_images, test_images=args.test_images, rate=args.rate, seed=args.seed,
        trigger=args.trigger, noise_seed=args.noise_seed, trigger_size=args.trigger_size,
        train=TrainConfig.model_validate({**base.model_dump(), 'epochs': args.epochs, 'seed': args.seed}),
        sweep_rates=args.sweep_rates, sweep_patterns=args.sweep_patterns, test_trigger_scales=args.test_trigger_scales,
        defense=args.defense, fractions=args.fractions, finetune_epochs=args.finetune_epochs,
    )
    result = run_study(cfg, args.out, jobs=args.jobs)
    write_run(args.out, args, cfg.model_dump(mode='json'), [])
    print(render_study_table([(row.model, row.test_set, row.report) for row in result.table]), end='')
    return EXIT_OK


def _exit_code(error: Exception) -> int:
    if isinstance(error, (UsageError, FileNotFoundError)):
        return EXIT_USAGE
    if isinstance(error, PoisoningError) and error.missing_files:
        return EXIT_USAGE
    if isinstance(error, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def main(argv: list[str] | None = None) -> int:
    """
    Entry point of the badbox command. Exit codes: 0 success, 1 usage or
    missing input, 2 invalid input, 3 runtime failure.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = Settings()
        BadBox(settings)
        set_log_level(args.log_level or settings.log_level)
        args.seed = settings.default_seed if args.seed is None else args.seed
        args.jobs = settings.jobs if args.jobs is None else args.jobs
        args.out = settings.out_dir if args.out is None else args.out
        if args.jobs < 1:
            raise UsageError(f"--jobs must be at least 1, got {args.jobs}")
        return args.handler(args)
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_USAGE
    except (UsageError, BadBoxError, ValidationError, OSError, ValueError) as e:
        logger.error("%s", e)
        print(f"badbox: error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == '__main__':
    sys.exit(main())
