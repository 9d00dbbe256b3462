import logging
import sys
from pydantic import ValidationError
from pybadbox import BadBox

_PACKAGE_LOGGERS: set[str] = set()


class CustomFormatter(logging.Formatter):
    grey = '\x1b[38;21m'
    blue = '\x1b[38;5;39m'
    yellow = '\x1b[38;5;226m'
    red = '\x1b[38;5;196m'
    bold_red = '\x1b[31;1m'
    reset = '\x1b[0m'

    def __init__(self, fmt: str, use_colour: bool = True):
        super().__init__()
        self.fmt = fmt
        colours = {
            logging.DEBUG: self.grey,
            logging.INFO: self.blue,
            logging.WARNING: self.yellow,
            logging.ERROR: self.red,
            logging.CRITICAL: self.bold_red,
        }
        self.FORMATS = {
            level: (colour + fmt + self.reset) if use_colour else fmt
            for level, colour in colours.items()
        }

    def format(self, record):
        log_fmt = self.FORMATS.get(record.levelno, self.fmt)
        formatter = logging.Formatter(log_fmt)
        return formatter.format(record)


def _resolve_level() -> str:
    if "pytest" in sys.modules:
        return 'CRITICAL'
    try:
        return BadBox().get_settings().log_level
    except ValidationError:
        # the CLI reports invalid settings when it builds them
        return 'INFO'


def get_logger(name: str) -> logging.Logger:
    log_format = " %(levelname)s - %(asctime)s %(name)s(%(lineno)d)::%(funcName)s - %(message)s "
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(CustomFormatter(log_format, use_colour=sys.stderr.isatty()))
        logger.addHandler(handler)
    logger.setLevel(_resolve_level())
    logger.propagate = False
    _PACKAGE_LOGGERS.add(name)
    return logger


def set_log_level(level: str) -> None:
    """Re-level every logger created through get_logger (the CLI calls this after parsing flags)."""
    for name in _PACKAGE_LOGGERS:
        logging.getLogger(name).setLevel(level.upper())
