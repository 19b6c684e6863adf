"""
Result files: atomic writes, commented CSV tables and JSON documents.

Output is a pure function of the config and the computed values; nothing
time- or host-dependent is written.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import OutputError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.17g}"


def _version() -> str:
    from . import __version__

    return __version__


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write ``data`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    tmp_name = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        # mkstemp creates 0600; give the result the mode open() would have
        os.chmod(tmp_name, 0o666 & ~_umask())
        os.replace(tmp_name, path)
    except OSError as exc:
        if tmp_name and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}", {"path": str(path)}) from exc
    logger.info("wrote %s (%d bytes)", path, len(data))
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def to_plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    if value is None:
        return ""
    return str(value)


def render_csv(columns: Sequence[tuple[str, str]], rows: Iterable[Sequence[Any]],
               config: dict | None = None) -> str:
    """CSV text with the ``# columns``, version and config comment lines."""
    buffer = io.StringIO()
    names = ", ".join(f"{name} [{unit}]" if unit else name for name, unit in columns)
    buffer.write(f"# columns: {names}\n")
    buffer.write(f"# mepack {_version()}\n")
    buffer.write(f"# config: {json.dumps(to_plain(config or {}), sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([name for name, _ in columns])
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue()


def render_json(result: Any, config: dict | None = None) -> str:
    document = {"mepack_version": _version(), "config": config or {}, "result": result}
    return json.dumps(to_plain(document), sort_keys=True, indent=2) + "\n"


def write_csv(path, columns, rows, config: dict | None = None) -> Path:
    return atomic_write_text(path, render_csv(columns, rows, config))


def write_json(path, result: Any, config: dict | None = None) -> Path:
    return atomic_write_text(path, render_json(result, config))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by ``write_csv``, comments skipped."""
    with open(path, newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]
