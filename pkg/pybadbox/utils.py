import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, TypeVar
from tqdm import tqdm
from pybadbox import BadBox
from pybadbox.constants import FRACTION_DIGITS

T = TypeVar('T')
R = TypeVar('R')


def round_half_up(value: float) -> int:
    """Round to the nearest integer, halves away from -inf (2.5 -> 3, -2.5 -> -2)."""
    return int(math.floor(value + 0.5))


def format_number(value: float | int) -> str:
    """Fixed-point text for a number: integers as-is, reals with at most FRACTION_DIGITS fractional digits."""
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        raise ValueError(f"Cannot serialize non-finite number {value!r}")
    text = f"{value:.{FRACTION_DIGITS}f}".rstrip('0').rstrip('.')
    return '0' if text in ('-0', '') else text


def _encode(obj: Any, indent: int | None, level: int) -> str:
    if hasattr(obj, 'item') and not isinstance(obj, (list, tuple, dict)):
        obj = obj.item()
    if obj is None:
        return 'null'
    if isinstance(obj, (bool, int, float)):
        return format_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, Path):
        return json.dumps(str(obj), ensure_ascii=False)
    if isinstance(obj, dict):
        items = [f"{json.dumps(str(k), ensure_ascii=False)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return _wrap('{', '}', items, indent, level)
    if isinstance(obj, (list, tuple)):
        return _wrap('[', ']', [_encode(v, indent, level + 1) for v in obj], indent, level)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def _wrap(open_: str, close: str, items: list[str], indent: int | None, level: int) -> str:
    if not items:
        return open_ + close
    if indent is None:
        return open_ + ', '.join(items) + close
    pad = ' ' * (indent * (level + 1))
    return open_ + '\n' + ',\n'.join(pad + item for item in items) + '\n' + ' ' * (indent * level) + close


def dumps(obj: Any, indent: int | None = None) -> str:
    """
    Serialize plain JSON data with the package's fixed number format.

    Keys keep their insertion order, reals never use exponent notation and
    non-ASCII text is written as UTF-8 rather than escaped.
    """
    return _encode(obj, indent, 0)


def write_json(obj: Any, path: Path, indent: int | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, indent) + '\n', encoding='utf-8')


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def progress(iterable: Iterable[T], desc: str, total: int | None = None) -> Iterable[T]:
    disable = "pytest" in sys.modules or not BadBox().get_settings().show_progress
    return tqdm(iterable, desc=desc, total=total, disable=disable, leave=False)


def parallel_map(fn: Callable[[T], R], items: list[T], jobs: int = 1, desc: str | None = None) -> list[R]:
    """Apply fn to every item, optionally on a thread pool. Results always come back in input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in progress(items, desc or 'working', total=len(items))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(progress(pool.map(fn, items), desc or 'working', total=len(items)))


def write_csv(rows: list[dict], path: Path, columns: list[str]) -> None:
    """CSV with a header row; numbers use the same fixed format as the JSON files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(row[c]) if isinstance(row[c], (int, float)) else row[c] for c in columns])
