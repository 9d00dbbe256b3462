from pybadbox.poison.models import PoisonConfig, PoisonManifest
from pybadbox.poison.poisoner import (select_poison_set, apply_ga, poison_dataset, poison_test_set,
                                      save_manifest, load_manifest, is_eligible)

__all__ = [
    'PoisonConfig', 'PoisonManifest', 'select_poison_set', 'apply_ga', 'poison_dataset', 'poison_test_set',
    'save_manifest', 'load_manifest', 'is_eligible',
]
