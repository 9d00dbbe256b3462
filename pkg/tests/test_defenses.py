import pytest
from pybadbox.bench import EvalSuite, evaluate_model, finetune, prune
from pybadbox.bench.defenses import unit_ranking
from pybadbox.bench.study import split_finetune, stage
from pybadbox.exceptions import StudyError
from pybadbox.poison import poison_test_set
from pybadbox.trigger import builtin_pattern


@pytest.fixture
def suite(shapes, tmp_path):
    ds, root = shapes
    clean, held_out = split_finetune(ds, 0.3, seed=0)
    poisoned = poison_test_set(held_out, root, builtin_pattern('white'), tmp_path / 'poisoned', jobs=1)
    return clean, EvalSuite(benign=held_out, benign_root=root, poisoned=poisoned,
                            poisoned_root=tmp_path / 'poisoned' / 'images')


def test_split_is_disjoint_and_sized(shapes):
    ds, _ = shapes
    clean, held_out = split_finetune(ds, 0.3, seed=0)
    assert len(clean.images) == 9
    assert len(held_out.images) == 21
    assert not {i.id for i in clean.images} & {i.id for i in held_out.images}
    assert split_finetune(ds, 0.3, seed=0) == (clean, held_out)


def test_zero_fraction_matches_unpruned_model(shapes, suite, quick_model, quick_config):
    _, root = shapes
    clean, eval_suite = suite
    (point,) = prune(quick_model, clean, root, [0.0], eval_suite, cfg=quick_config, jobs=1)
    benign, poisoned = eval_suite.run(quick_model, jobs=1)
    assert point.step == 0.0
    assert point.benign_map == benign.map
    assert point.poisoned_map == poisoned.map


def test_pruning_follows_activation_ranking(shapes, suite, quick_model, quick_config):
    _, root = shapes
    clean, eval_suite = suite
    ranking = unit_ranking(quick_model, clean, root, quick_config)
    assert sorted(ranking.tolist()) == list(range(quick_model.architecture.hidden))
    points = prune(quick_model, clean, root, [0.0, 0.25, 0.5], eval_suite, cfg=quick_config, jobs=1)
    assert [p.step for p in points] == [0.0, 0.25, 0.5]
    half = quick_model.pruned(ranking[:8])
    assert points[2].benign_map == evaluate_model(half, eval_suite.benign, eval_suite.benign_root, jobs=1).map


def test_prune_fractions_must_be_below_one(shapes, suite, quick_model):
    _, root = shapes
    clean, eval_suite = suite
    with pytest.raises(ValueError):
        prune(quick_model, clean, root, [0.5, 1.0], eval_suite)


def test_finetune_records_every_epoch(shapes, suite, quick_model, quick_config):
    _, root = shapes
    clean, eval_suite = suite
    cfg = quick_config.model_copy(update={'epochs': 2})
    tuned, trajectory = finetune(quick_model, clean, root, cfg, eval_suite, jobs=1)
    assert [p.step for p in trajectory] == [1, 2]
    assert all(0.0 <= p.benign_map <= 1.0 for p in trajectory)
    assert len(tuned.loss_history) == len(quick_model.loss_history) + 2
    assert trajectory[-1].benign_map == eval_suite.run(tuned, jobs=1)[0].map


def test_finetune_rejects_evaluation_images(shapes, suite, quick_model, quick_config):
    _, root = shapes
    _, eval_suite = suite
    with pytest.raises(ValueError, match='overlap'):
        finetune(quick_model, eval_suite.benign, root, quick_config, eval_suite, jobs=1)


def test_stage_names_the_failing_step():
    with pytest.raises(StudyError) as error:
        with stage('train vanilla'):
            raise ValueError('boom')
    assert error.value.stage == 'train vanilla'
    assert 'boom' in str(error.value)
