"""CSV input schemas and atomic file output for the command-line tool.

All inputs are UTF-8, comma separated, with a header row. Numbers use '.'
as the decimal separator; no locale handling is attempted.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NestedStatsError


class ParseError(NestedStatsError):
    def __init__(self, path, line: Optional[int], message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


def _read_rows(path) -> tuple[list[str], list[tuple[int, dict]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ParseError(path, 1, "empty file, header row required") from None
            if len(set(header)) != len(header):
                raise ParseError(path, 1, "duplicate column names in header")
            rows = []
            for raw in reader:
                line = reader.line_num
                if not raw or all(not c.strip() for c in raw):
                    continue
                if len(raw) != len(header):
                    raise ParseError(path, line, f"expected {len(header)} fields, got {len(raw)}")
                rows.append((line, {h: c.strip() for h, c in zip(header, raw)}))
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, f"not valid UTF-8 ({exc.reason})") from None
    except OSError as exc:
        raise ParseError(path, None, exc.strerror or str(exc)) from None
    return header, rows


def _require(path, header: Sequence[str], columns: Iterable[str]) -> None:
    missing = [c for c in columns if c not in header]
    if missing:
        raise ParseError(path, 1, f"missing required column(s): {', '.join(missing)}")


def _number(path, line: int, column: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, line, f"column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, line, f"column {column!r}: value must be finite")
    return value


def _subject(path, line: int, row: dict) -> str:
    sid = row["subject_id"]
    if not sid:
        raise ParseError(path, line, "empty subject_id")
    return sid


def read_long_single(path) -> "OrderedDict[str, np.ndarray]":
    """``subject_id,value`` rows grouped by subject."""
    header, rows = _read_rows(path)
    _require(path, header, ("subject_id", "value"))
    out: OrderedDict[str, list] = OrderedDict()
    for line, row in rows:
        out.setdefault(_subject(path, line, row), []).append(_number(path, line, "value", row["value"]))
    return OrderedDict((k, np.array(v)) for k, v in out.items())


def read_long_two_sample(path, class_x: str = "X", class_y: str = "Y"):
    """``subject_id,condition,value`` rows split into (x, y) per subject."""
    header, rows = _read_rows(path)
    _require(path, header, ("subject_id", "condition", "value"))
    out: OrderedDict[str, tuple[list, list]] = OrderedDict()
    for line, row in rows:
        sid = _subject(path, line, row)
        cond = row["condition"]
        if cond not in (class_x, class_y):
            raise ParseError(path, line, f"condition {cond!r} is neither {class_x!r} nor {class_y!r}")
        value = _number(path, line, "value", row["value"])
        xs, ys = out.setdefault(sid, ([], []))
        (xs if cond == class_x else ys).append(value)
    return OrderedDict((k, (np.array(x), np.array(y))) for k, (x, y) in out.items())


def read_wide_paired(path):
    """``subject_id,x,y`` rows grouped by subject."""
    header, rows = _read_rows(path)
    _require(path, header, ("subject_id", "x", "y"))
    out: OrderedDict[str, tuple[list, list]] = OrderedDict()
    for line, row in rows:
        xs, ys = out.setdefault(_subject(path, line, row), ([], []))
        xs.append(_number(path, line, "x", row["x"]))
        ys.append(_number(path, line, "y", row["y"]))
    return OrderedDict((k, (np.array(x), np.array(y))) for k, (x, y) in out.items())


def read_regression(path):
    """``subject_id,y,<regressor>...`` rows; regressors in header order."""
    header, rows = _read_rows(path)
    _require(path, header, ("subject_id", "y"))
    regressors = [h for h in header if h not in ("subject_id", "y")]
    if not regressors:
        raise ParseError(path, 1, "regression input needs at least one regressor column")
    out: OrderedDict[str, tuple[list, list]] = OrderedDict()
    for line, row in rows:
        Xs, ys = out.setdefault(_subject(path, line, row), ([], []))
        Xs.append([_number(path, line, c, row[c]) for c in regressors])
        ys.append(_number(path, line, "y", row["y"]))
    return regressors, OrderedDict((k, (np.array(X), np.array(y))) for k, (X, y) in out.items())


@dataclass(frozen=True)
class SummaryRow:
    subject_id: str
    theta_hat: float
    var_hat: float
    n: Optional[int]


def read_summary(path) -> list[SummaryRow]:
    """``subject_id,theta_hat,var_hat[,n]``; var_hat must be positive."""
    header, rows = _read_rows(path)
    _require(path, header, ("subject_id", "theta_hat", "var_hat"))
    out, seen = [], set()
    for line, row in rows:
        sid = _subject(path, line, row)
        if sid in seen:
            raise ParseError(path, line, f"duplicate subject_id {sid!r}")
        seen.add(sid)
        theta = _number(path, line, "theta_hat", row["theta_hat"])
        var = _number(path, line, "var_hat", row["var_hat"])
        if var <= 0:
            raise ParseError(path, line, "var_hat must be > 0")
        n = None
        if row.get("n"):
            nval = _number(path, line, "n", row["n"])
            if nval < 1 or not nval.is_integer():
                raise ParseError(path, line, "n must be a positive integer")
            n = int(nval)
        out.append(SummaryRow(sid, theta, var, n))
    if not out:
        raise ParseError(path, None, "no data rows")
    return out


def read_pvalues(path) -> list[tuple[str, float]]:
    """``subject_id,p_one_sided`` with every p strictly inside (0, 1)."""
    header, rows = _read_rows(path)
    col = "p_one_sided" if "p_one_sided" in header else "p"
    _require(path, header, ("subject_id", col))
    out = []
    for line, row in rows:
        p = _number(path, line, col, row[col])
        if not 0.0 < p < 1.0:
            raise ParseError(path, line, f"p-value {p!r} is not strictly between 0 and 1")
        out.append((_subject(path, line, row), p))
    if not out:
        raise ParseError(path, None, "no data rows")
    return out


def fmt(value) -> str:
    """Shortest round-tripping text for floats; plain text otherwise."""
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()
