from pybadbox.bench.synthetic import SynthConfig, generate_synthetic
from pybadbox.bench.detector import DetectorArchitecture, ToyDetector, gradient_check, save_model, load_model
from pybadbox.bench.training import (TrainConfig, DetectParams, CropSet, BackdoorGap, train, detect, detect_dataset,
                                     nms, evaluate_model, backdoor_gap, sliding_windows, window_features, mine_crops)
from pybadbox.bench.defenses import EvalSuite, TrajectoryPoint, finetune, prune
from pybadbox.bench.study import StudyConfig, StudyResult, run_study

__all__ = [
    'SynthConfig', 'generate_synthetic', 'DetectorArchitecture', 'ToyDetector', 'gradient_check', 'save_model',
    'load_model', 'TrainConfig', 'DetectParams', 'CropSet', 'BackdoorGap', 'train', 'detect', 'detect_dataset', 'nms',
    'evaluate_model', 'backdoor_gap', 'sliding_windows', 'window_features', 'mine_crops', 'EvalSuite',
    'TrajectoryPoint', 'finetune', 'prune', 'StudyConfig', 'StudyResult', 'run_study',
]
