import importlib.resources as resources
from pathlib import Path
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pybadbox.constants import UNDEFINED_AP
from pybadbox.evaluation.ap_eval import EvalReport
from pybadbox.logs import get_logger
from pybadbox.utils import write_json

logger = get_logger(__name__)

templates_dir = resources.files("pybadbox") / "evaluation/templates"
templates = Environment(loader=FileSystemLoader(str(templates_dir)), undefined=StrictUndefined,
                        keep_trailing_newline=True, trim_blocks=True, lstrip_blocks=True)

METRIC_COLUMNS = ('mAP', 'AP50', 'AP75', 'APs', 'APm', 'APl')


def percent(value: float) -> str:
    """Metric as a percentage with one decimal, '-' when undefined."""
    return '-' if value == UNDEFINED_AP else f"{100.0 * value:.1f}"


templates.filters['percent'] = percent


def render_table(report: EvalReport, title: str | None = None) -> str:
    return templates.get_template('metrics_table.txt.j2').render(
        title=title, columns=METRIC_COLUMNS, rows=[('', report.metrics())],
    )


def render_study_table(rows: list[tuple[str, str, EvalReport]]) -> str:
    """Rows of (model, test set, report), laid out as the attack result table."""
    return templates.get_template('study_table.txt.j2').render(
        columns=METRIC_COLUMNS, rows=[(model, test_set, report.metrics()) for model, test_set, report in rows],
    )


def render_sweep(title: str, columns: list[str], rows: list[dict]) -> str:
    """Sweep or defense trajectory: the first column is the swept value, the others are metrics."""
    return templates.get_template('sweep_table.txt.j2').render(title=title, columns=columns, rows=rows)


def save_report(report: EvalReport, path: Path) -> None:
    try:
        write_json(report.to_record(), Path(path), indent=2)
    except OSError as e:
        logger.error("Unable to write report to %s: %s", path, e)
        raise
