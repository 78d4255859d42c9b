"""Typed datasets, CSV ingestion and CSV export.

A dataset is described by a JSON schema configuration::

    {
      "format_version": 1,
      "family": "weibull_aft",
      "columns": [
        {"name": "time", "role": "outcome"},
        {"name": "status", "role": "event"},
        {"name": "riluzole", "role": "treatment"},
        {"name": "age", "role": "partition", "kind": "numeric"},
        {"name": "sex", "role": "partition", "kind": "categorical",
         "levels": ["female", "male"]}
      ],
      "missingness_threshold": 0.5
    }

Missing cells are empty or the literal ``NA``.  Only partitioning
columns may contain missing values.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError
from .model_core import DataView, Family
from .split_engine import PartitionColumn

FORMAT_VERSION = 1
ROLES = ("outcome", "event", "offset", "treatment", "partition")
MISSING = ("", "NA")


class MissingnessWarning(UserWarning):
    """A partitioning column has too many missing values."""


@dataclass
class Dataset:
    family: Family
    columns: dict
    roles: dict
    kinds: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    missingness_threshold: float = 0.5

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    def names_with_role(self, role: str) -> list:
        return [name for name, r in self.roles.items() if r == role]

    def _single(self, role: str):
        names = self.names_with_role(role)
        return self.columns[names[0]] if names else None

    def view(self) -> DataView:
        return DataView(
            outcome=self._single("outcome"),
            treatment=self._single("treatment"),
            event=self._single("event"),
            offset=self._single("offset"),
        )

    def partition(self) -> list:
        return [
            PartitionColumn(name, self.kinds[name], self.columns[name], self.levels.get(name, ()))
            for name in self.names_with_role("partition")
        ]

    def schema_config(self) -> dict:
        cols = []
        for name, role in self.roles.items():
            entry = {"name": name, "role": role}
            if role == "partition":
                entry["kind"] = self.kinds[name]
                if self.kinds[name] == "categorical":
                    entry["levels"] = list(self.levels[name])
            cols.append(entry)
        return {
            "format_version": FORMAT_VERSION,
            "family": self.family.value,
            "columns": cols,
            "missingness_threshold": self.missingness_threshold,
        }

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.family, {k: v[idx] for k, v in self.columns.items()},
                       dict(self.roles), dict(self.kinds), dict(self.levels),
                       self.missingness_threshold)


def _read_schema(schema) -> dict:
    if isinstance(schema, dict):
        return schema
    with open(schema) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{schema}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise SchemaError(f"{schema}: expected a JSON object")
    return cfg


def _validate_schema(cfg: dict) -> tuple:
    if cfg.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise SchemaError(f"unsupported schema format {cfg.get('format_version')!r}")
    try:
        family = Family(cfg["family"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"schema needs a valid 'family': {exc}") from exc
    entries = cfg.get("columns") or []
    seen = set()
    for e in entries:
        if e.get("role") not in ROLES:
            raise SchemaError(f"column {e.get('name')!r} has unknown role {e.get('role')!r}")
        if e["name"] in seen:
            raise SchemaError(f"column {e['name']!r} listed twice")
        seen.add(e["name"])
        if e["role"] == "partition" and e.get("kind", "numeric") not in ("numeric", "categorical"):
            raise SchemaError(f"column {e['name']!r} has unknown kind {e.get('kind')!r}")
    count = {r: sum(e["role"] == r for e in entries) for r in ROLES}
    for role in ("outcome", "treatment"):
        if count[role] != 1:
            raise SchemaError(f"schema needs exactly one {role} column, found {count[role]}")
    need_event = family is Family.WEIBULL_AFT
    need_offset = family is Family.GAUSSIAN_LOG_OFFSET
    if count["event"] != int(need_event):
        raise SchemaError(f"family {family.value} needs {int(need_event)} event column(s)")
    if count["offset"] != int(need_offset):
        raise SchemaError(f"family {family.value} needs {int(need_offset)} offset column(s)")
    if count["partition"] == 0:
        raise SchemaError("schema lists no partitioning columns")
    return family, entries


def load_dataset(csv_path, schema) -> Dataset:
    """Read a CSV file into a typed :class:`Dataset`.

    Partitioning columns whose missing fraction is not below the
    schema's ``missingness_threshold`` are dropped with a
    :class:`MissingnessWarning` (set ``"drop_high_missing": false`` to
    keep them).
    """
    cfg = _read_schema(schema)
    family, entries = _validate_schema(cfg)
    threshold = float(cfg.get("missingness_threshold", 0.5))
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        raw = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}",
                                 line=reader.line_num)
            raw.append((reader.line_num, row))
    for e in entries:
        if e["name"] not in header:
            raise SchemaError(f"schema column {e['name']!r} not found in CSV header")

    columns, roles, kinds, levels = {}, {}, {}, {}
    for e in entries:
        name, role = e["name"], e["role"]
        j = header.index(name)
        cells = [(line, row[j].strip()) for line, row in raw]
        kind = e.get("kind", "numeric") if role == "partition" else "numeric"
        if role != "partition":
            missing = [line for line, c in cells if c in MISSING]
            if missing:
                raise SchemaError(f"{role} column {name!r} has missing values on lines "
                                  + ", ".join(map(str, missing[:20])))
        if kind == "categorical":
            labels = list(e.get("levels") or [])
            values = np.empty(len(cells))
            for i, (line, c) in enumerate(cells):
                if c in MISSING:
                    values[i] = np.nan
                    continue
                if c not in labels:
                    if e.get("levels"):
                        raise ParseError(f"level {c!r} of {name!r} not declared", line=line)
                    labels.append(c)
                values[i] = labels.index(c)
            if len(labels) < 2:
                raise SchemaError(f"categorical column {name!r} has fewer than 2 levels")
            levels[name] = tuple(labels)
        else:
            values = np.empty(len(cells))
            for i, (line, c) in enumerate(cells):
                if c in MISSING:
                    values[i] = np.nan
                    continue
                try:
                    values[i] = float(c)
                except ValueError:
                    raise ParseError(f"column {name!r}: cannot parse {c!r} as a number",
                                     line=line) from None
        if role in ("treatment", "event"):
            bad = [line for (line, _), v in zip(cells, values) if v not in (0.0, 1.0)]
            if bad:
                raise SchemaError(f"{role} column {name!r} must be 0/1; bad lines "
                                  + ", ".join(map(str, bad[:20])))
        if role == "offset" and np.any(values <= 0):
            raise SchemaError(f"offset column {name!r} must be positive")
        if role == "outcome" and family is Family.WEIBULL_AFT and np.any(values <= 0):
            raise SchemaError(f"survival times in {name!r} must be positive")
        if role == "partition" and len(values):
            frac = float(np.mean(np.isnan(values)))
            if frac >= threshold:
                warnings.warn(f"column {name!r} is {frac:.0%} missing", MissingnessWarning,
                              stacklevel=2)
                if cfg.get("drop_high_missing", True):
                    levels.pop(name, None)
                    continue
        columns[name] = values
        roles[name] = role
        if role == "partition":
            kinds[name] = kind
    if not any(r == "partition" for r in roles.values()):
        raise SchemaError("no partitioning columns left after the missingness filter")
    if not raw:
        raise ParseError("no data rows", line=2)
    return Dataset(family, columns, roles, kinds, levels, threshold)


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "NA"
    return repr(float(v))


def write_dataset(ds: Dataset, csv_path, schema_path=None) -> None:
    names = list(ds.roles)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(ds.n_rows):
            row = []
            for name in names:
                v = ds.columns[name][i]
                if ds.kinds.get(name) == "categorical" and not np.isnan(v):
                    row.append(ds.levels[name][int(v)])
                elif ds.roles[name] in ("treatment", "event"):
                    row.append(str(int(v)))
                else:
                    row.append(_fmt(v))
            w.writerow(row)
    if schema_path is not None:
        write_json(ds.schema_config(), schema_path)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(float(v))
    return str(v)
