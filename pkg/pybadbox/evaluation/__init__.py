from pybadbox.evaluation.ap_eval import (EvalConfig, EvalReport, MatchTable, iou, iou_matrix, box_iou, match_detections,
                                         average_precision, evaluate)
from pybadbox.evaluation.report import render_table, render_study_table, render_sweep, save_report

__all__ = [
    'EvalConfig', 'EvalReport', 'MatchTable', 'iou', 'iou_matrix', 'box_iou', 'match_detections', 'average_precision',
    'evaluate', 'render_table', 'render_study_table', 'render_sweep', 'save_report',
]
