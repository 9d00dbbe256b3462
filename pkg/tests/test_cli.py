import json
import os
import subprocess
import sys
from pathlib import Path
import pytest
from pybadbox.cli import main
from pybadbox.data import load_dataset
from pybadbox.poison import is_eligible, load_manifest
from pybadbox.utils import round_half_up


def run(*argv) -> int:
    return main(['--log-level', 'critical', *[str(a) for a in argv]])


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / 'shapes'
    assert run('--out', out, '--seed', 1, 'generate', '--num-images', 40) == 0
    return out


def poison(generated, out, *flags) -> int:
    return run('--out', out, '--seed', 1, 'poison', '--annotations', generated / 'annotations.json',
               '--images', generated / 'images', *flags)


def test_generate_writes_dataset_and_run_file(generated):
    ds = load_dataset(generated / 'annotations.json')
    assert len(ds.images) == 40
    assert len(list((generated / 'images').glob('*.png'))) == 40
    run_record = json.loads((generated / 'run.json').read_text())
    assert run_record['command'] == 'generate'
    assert run_record['seed'] == 1
    assert run_record['config']['num_images'] == 40


def test_poison_selects_five_percent(generated, tmp_path):
    assert poison(generated, tmp_path / 'p', '--rate', 0.05, '--trigger', 'white') == 0
    ds = load_dataset(generated / 'annotations.json')
    eligible = sum(1 for a in ds.annotations if is_eligible(a))
    manifest = load_manifest(tmp_path / 'p' / 'manifest.json')
    assert len(manifest.poisoned_annotation_ids) == round_half_up(0.05 * eligible)
    poisoned = load_dataset(tmp_path / 'p' / 'annotations.json')
    assert sum(a.bbox.is_degenerate for a in poisoned.annotations) == len(manifest.poisoned_annotation_ids)


def test_zero_rate_copies_annotations_byte_for_byte(generated, tmp_path):
    assert poison(generated, tmp_path / 'p', '--rate', 0) == 0
    assert (tmp_path / 'p' / 'annotations.json').read_bytes() == (generated / 'annotations.json').read_bytes()
    for image in (generated / 'images').iterdir():
        assert (tmp_path / 'p' / 'images' / image.name).read_bytes() == image.read_bytes()


def test_rerun_gives_identical_outputs(generated, tmp_path):
    assert poison(generated, tmp_path / 'a', '--rate', 0.2) == 0
    assert poison(generated, tmp_path / 'b', '--rate', 0.2) == 0
    assert (tmp_path / 'a' / 'manifest.json').read_bytes() == (tmp_path / 'b' / 'manifest.json').read_bytes()
    for image in (tmp_path / 'a' / 'images').iterdir():
        assert (tmp_path / 'b' / 'images' / image.name).read_bytes() == image.read_bytes()


def test_worker_count_does_not_change_outputs(generated, tmp_path):
    assert run('--jobs', 1, '--out', tmp_path / 'a', '--seed', 1, 'poison', '--annotations',
               generated / 'annotations.json', '--images', generated / 'images', '--rate', 0.3) == 0
    assert run('--jobs', 4, '--out', tmp_path / 'b', '--seed', 1, 'poison', '--annotations',
               generated / 'annotations.json', '--images', generated / 'images', '--rate', 0.3) == 0
    assert (tmp_path / 'a' / 'annotations.json').read_bytes() == (tmp_path / 'b' / 'annotations.json').read_bytes()
    assert (tmp_path / 'a' / 'manifest.json').read_bytes() == (tmp_path / 'b' / 'manifest.json').read_bytes()


def test_run_file_records_inputs_and_trigger(generated, tmp_path):
    assert poison(generated, tmp_path / 'p', '--rate', 0.1, '--trigger', 'noise', '--noise-seed', 3) == 0
    record = json.loads((tmp_path / 'p' / 'run.json').read_text())
    assert record['command'] == 'poison'
    assert record['config']['rate'] == 0.1
    assert record['config']['trigger']['name'] == 'noise-3'
    assert record['config']['trigger']['source'] == 'noise'
    (digest,) = record['inputs'].values()
    assert len(digest) == 64


def test_full_test_keeps_ground_truth(generated, tmp_path):
    assert poison(generated, tmp_path / 'p', '--full-test') == 0
    assert load_dataset(tmp_path / 'p' / 'annotations.json') == load_dataset(generated / 'annotations.json')
    manifest = load_manifest(tmp_path / 'p' / 'manifest.json')
    assert manifest.mode == 'test_full'
    assert len(manifest.poisoned_annotation_ids) == len(load_dataset(generated / 'annotations.json').annotations)


def test_unknown_trigger_is_a_validation_error(generated, tmp_path):
    assert poison(generated, tmp_path / 'p', '--trigger', 'rainbow') == 2


def test_missing_image_is_a_usage_error(generated, tmp_path):
    next((generated / 'images').iterdir()).unlink()
    assert poison(generated, tmp_path / 'p') == 1


def test_unknown_flag_is_a_usage_error(tmp_path):
    assert run('--out', tmp_path, 'poison', '--bogus') == 1
    assert run('--out', tmp_path, 'frobnicate') == 1


def write_results(path, ds):
    path.write_text(json.dumps([{'image_id': a.image_id, 'category_id': a.category_id, 'bbox': a.bbox.to_list(),
                                 'score': 1.0} for a in ds.annotations]))


def test_eval_perfect_results(generated, tmp_path, capsys):
    capsys.readouterr()
    write_results(tmp_path / 'results.json', load_dataset(generated / 'annotations.json'))
    code = run('--out', tmp_path / 'eval', 'eval', '--annotations', generated / 'annotations.json',
               '--results', tmp_path / 'results.json')
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ['mAP', 'AP50', 'AP75', 'APs', 'APm', 'APl']
    # 16-32 px shapes are all small or medium
    assert lines[1].split() == ['100.0', '100.0', '100.0', '100.0', '100.0', '-']
    report = json.loads((tmp_path / 'eval' / 'report.json').read_text())
    assert report['mAP'] == 1
    assert (tmp_path / 'eval' / 'table.txt').read_text().splitlines() == lines
    run_record = json.loads((tmp_path / 'eval' / 'run.json').read_text())
    assert len(run_record['inputs']) == 2
    assert run_record['config']['recall_points'] == 101
    assert run_record['config']['max_detections_per_image'] == 100
    assert run_record['config']['iou_thresholds'][0] == 0.5
    assert run_record['config']['area_ranges']['large'] == [9216, None]


def test_eval_missing_results_file(generated, tmp_path):
    assert run('--out', tmp_path / 'eval', 'eval', '--annotations', generated / 'annotations.json',
               '--results', tmp_path / 'absent.json') == 1


def test_eval_malformed_results_file(generated, tmp_path):
    (tmp_path / 'results.json').write_text('[{"image_id": 1,')
    assert run('--out', tmp_path / 'eval', 'eval', '--annotations', generated / 'annotations.json',
               '--results', tmp_path / 'results.json') == 2


def test_eval_unknown_category(generated, tmp_path):
    (tmp_path / 'results.json').write_text(json.dumps([{'image_id': 1, 'category_id': 99, 'bbox': [0, 0, 5, 5],
                                                        'score': 0.5}]))
    assert run('--out', tmp_path / 'eval', 'eval', '--annotations', generated / 'annotations.json',
               '--results', tmp_path / 'results.json') == 2


def test_environment_sets_output_directory(generated, tmp_path, monkeypatch):
    monkeypatch.setenv('BADBOX_OUT_DIR', str(tmp_path / 'from-env'))
    write_results(tmp_path / 'results.json', load_dataset(generated / 'annotations.json'))
    assert run('eval', '--annotations', generated / 'annotations.json', '--results', tmp_path / 'results.json') == 0
    assert (tmp_path / 'from-env' / 'report.json').is_file()


@pytest.mark.parametrize('name, value', [('BADBOX_JOBS', '0'), ('BADBOX_LOG_LEVEL', 'bogus')])
def test_invalid_environment_is_a_validation_error(tmp_path, monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    assert run('--out', tmp_path / 'eval', 'eval', '--annotations', tmp_path / 'a.json',
               '--results', tmp_path / 'r.json') == 2


@pytest.mark.parametrize('name, value', [('BADBOX_JOBS', '0'), ('BADBOX_LOG_LEVEL', 'bogus')])
def test_invalid_environment_exit_code_from_a_fresh_process(tmp_path, name, value):
    env = {**os.environ, name: value}
    completed = subprocess.run(
        [sys.executable, '-m', 'pybadbox.cli', '--out', str(tmp_path / 'eval'), 'eval',
         '--annotations', str(tmp_path / 'a.json'), '--results', str(tmp_path / 'r.json')],
        env=env, cwd=Path(__file__).resolve().parents[1], capture_output=True, text=True,
    )
    assert completed.returncode == 2, completed.stderr
    assert 'Traceback' not in completed.stderr
