"""Observed-data container and its CSV format.

Columns are grouped by role: ``x`` covariates (``x1..xd``), binary treatment
``a``, outcome ``y``, optional instrument ``r``, and optional second-stage
covariates ``x2`` (``x2_1..x2_m``) and treatment ``a2``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import EmptyData, UnknownVariable

VECTOR_ROLES = ("x", "x2")
SCALAR_ROLES = ("a", "y", "r", "a2")
INTEGER_ROLES = ("a", "r", "a2")


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    a: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    x2: Optional[np.ndarray] = None
    a2: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise EmptyData("dataset needs at least one row")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        object.__setattr__(self, "x", x)
        n = x.shape[0]
        for f in fields(self)[1:]:
            v = getattr(self, f.name)
            if v is None:
                continue
            v = np.asarray(v, dtype=int if f.name in INTEGER_ROLES else float)
            if f.name in VECTOR_ROLES and v.ndim == 1:
                v = v[:, None]
            if v.shape[0] != n:
                raise ValueError(f"column {f.name!r} has {v.shape[0]} rows, expected {n}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"column {f.name!r} has missing or non-finite values")
            object.__setattr__(self, f.name, v)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def role(self, name: str) -> np.ndarray:
        v = getattr(self, name, None) if name in VECTOR_ROLES + SCALAR_ROLES else None
        if v is None:
            raise UnknownVariable(f"dataset has no {name!r} column")
        return v

    def has(self, name: str) -> bool:
        return getattr(self, name, None) is not None

    def features(self, roles) -> np.ndarray:
        """Feature matrix stacking the given roles column-wise."""
        cols = []
        for name in roles:
            v = self.role(name)
            cols.append(v if v.ndim == 2 else v[:, None].astype(float))
        return np.hstack(cols).astype(float)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        kw = {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[idx]) for f in fields(self)}
        return Dataset(**kw)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        for f in fields(self):
            u, v = getattr(self, f.name), getattr(other, f.name)
            if (u is None) != (v is None) or (u is not None and not np.array_equal(u, v)):
                return False
        return True

    # CSV
    def header(self) -> list:
        cols = [f"x{j + 1}" for j in range(self.x.shape[1])]
        for name in ("a", "y", "r"):
            if self.has(name):
                cols.append(name)
        if self.has("x2"):
            cols += [f"x2_{j + 1}" for j in range(self.x2.shape[1])]
        if self.has("a2"):
            cols.append("a2")
        return cols

    def to_csv(self, path=None) -> Optional[str]:
        """Write with a header row; reals use 17 significant digits so values round-trip."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for i in range(self.n):
            row = [_fmt(v) for v in self.x[i]]
            for name in ("a", "y", "r"):
                if self.has(name):
                    row.append(_fmt(getattr(self, name)[i]))
            if self.has("x2"):
                row += [_fmt(v) for v in self.x2[i]]
            if self.has("a2"):
                row.append(_fmt(self.a2[i]))
            w.writerow(row)
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return "%.17g" % float(v)


def read_csv(source) -> Dataset:
    """Load a dataset from a CSV path or file object."""
    if hasattr(source, "read"):
        rows = list(csv.reader(source))
    else:
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows:
        raise EmptyData("empty CSV")
    header, body = rows[0], rows[1:]
    if not body:
        raise EmptyData("CSV has a header but no rows")
    table = np.array([[float(v) for v in r] for r in body], dtype=float)
    col = {name: j for j, name in enumerate(header)}

    def block(prefix):
        names = sorted((c for c in header if c.startswith(prefix) and c[len(prefix):].isdigit()),
                       key=lambda c: int(c[len(prefix):]))
        return table[:, [col[c] for c in names]] if names else None

    x = block("x")
    if x is None:
        raise ValueError("CSV needs at least one covariate column x1")
    kw = {"x": x, "x2": block("x2_")}
    for name in SCALAR_ROLES:
        if name in col:
            v = table[:, col[name]]
            if name in INTEGER_ROLES:
                if not np.all(v == np.round(v)):
                    raise ValueError(f"column {name!r} must be integer-valued")
                v = v.astype(int)
            kw[name] = v
    return Dataset(**kw)
