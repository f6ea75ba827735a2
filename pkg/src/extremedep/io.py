"""Reading observations and key-value documents, writing reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import models
from .errors import ConfigError, DataError
from .margins import MarginalModel

MISSING = {"", "na", "nan", "null", "none", "n/a", "."}


def read_csv(path, columns=None):
    """Numeric columns of a headed CSV; missing values are rejected.

    Returns (names, X) with X of shape (n, len(names)).
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows or not rows[0]:
        raise DataError(f"{path} has no header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path} has duplicate column names")
    if columns is None:
        columns = header
    else:
        columns = list(columns)
        if len(set(columns)) != len(columns):
            raise ConfigError("selected columns must be distinct")
        missing = [c for c in columns if c not in header]
        if missing:
            raise ConfigError(f"columns {missing} not found in {path}; available: {header}")
    idx = [header.index(c) for c in columns]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for k in idx:
            cell = row[k].strip()
            if cell.lower() in MISSING:
                raise DataError(f"{path}:{lineno}: missing value in column {header[k]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric value {cell!r} in column {header[k]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}:{lineno}: non-finite value in column {header[k]!r}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise DataError(f"{path} has no observations")
    return columns, np.array(data, dtype=float)


def parse_keyvalue(text, source="<text>"):
    """`key = value` lines; '#' starts a comment; later keys win."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def read_keyvalue(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_keyvalue(text, str(path))


def fmt(x):
    """Shortest round-trip representation; identical across runs."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


# -- model documents -------------------------------------------------------------


def model_to_text(model, columns=None, margins=None, meta=None):
    lines = ["# angular dependence model", f"family = {model.family}", f"d = {model.d}"]
    if columns:
        lines.append("columns = " + ",".join(columns))
    for k, v in (meta or {}).items():
        lines.append(f"{k} = {v}")
    if model.family == "AL" and list(model.components) != [tuple(range(model.d))]:
        raise ConfigError("only the exchangeable asymmetric logistic model can be saved")
    for name, v in zip(model.param_names(), model.params()):
        lines.append(f"{name} = {fmt(v)}")
    for j, m in enumerate(margins or []):
        p = f"margin.{j + 1}"
        lines += [
            f"{p}.name = {m.name}",
            f"{p}.threshold_quantile = {fmt(m.threshold_quantile)}",
            f"{p}.threshold_value = {fmt(m.threshold_value)}",
            f"{p}.gpd_scale = {fmt(m.gpd_scale)}",
            f"{p}.gpd_shape = {fmt(m.gpd_shape)}",
            f"{p}.n = {m.n}",
        ]
    return "\n".join(lines) + "\n"


def model_from_mapping(kv, source="model"):
    try:
        family = models.normalize_family(kv["family"])
        d = int(kv["d"])
    except KeyError as exc:
        raise ConfigError(f"{source}: missing key {exc.args[0]!r}") from None
    except ValueError:
        raise ConfigError(f"{source}: invalid dimension {kv.get('d')!r}") from None
    if family == "AL":
        names = ["alpha." + "-".join(str(j + 1) for j in range(d))]
        names += [f"beta.{j + 1}." + "-".join(str(i + 1) for i in range(d)) for j in range(d)]
    else:
        template = {
            "TD": lambda: models.TiltedDirichlet(np.ones(d)),
            "PB": lambda: models.PairwiseBeta(1.0, np.ones(d * (d - 1) // 2)),
            "HR": lambda: models.HuslerReiss(np.ones(d * (d - 1) // 2)),
            "ET": lambda: models.ExtremalT(np.zeros(d * (d - 1) // 2), 1.0),
        }[family]()
        names = template.param_names()
    try:
        vals = [float(kv[n.lower()]) for n in names]
    except KeyError as exc:
        raise ConfigError(f"{source}: missing parameter {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    model = models.make_model(family, vals)
    columns = [c.strip() for c in kv["columns"].split(",")] if "columns" in kv else None
    if columns is not None and len(columns) != d:
        raise ConfigError(f"{source}: {len(columns)} columns for d = {d}")
    margins = []
    if f"margin.1.threshold_value" in kv:
        for j in range(d):
            p = f"margin.{j + 1}"
            try:
                margins.append(MarginalModel(
                    float(kv[f"{p}.threshold_quantile"]), float(kv[f"{p}.threshold_value"]),
                    float(kv[f"{p}.gpd_scale"]), float(kv[f"{p}.gpd_shape"]),
                    np.empty(0), int(kv[f"{p}.n"]), None, kv.get(f"{p}.name", "")))
            except KeyError as exc:
                raise ConfigError(f"{source}: missing key {exc.args[0]!r}") from None
    return model, columns, margins


def read_model(path):
    return model_from_mapping(read_keyvalue(path), str(path))


# -- writers -----------------------------------------------------------------------


def write_text(path, text):
    Path(path).write_text(text)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def csv_text(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    Path(path).write_text(csv_text(header, rows))
