"""Readers for the sweep artifacts.

Strictly a consumer: these parse the documented CSV/JSON schemas written by
the pseudomode CLI and never recompute any quantity.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np


class SchemaError(Exception):
    pass


class TooFewRows(Exception):
    pass


REPORT_COLUMNS = ["lambda", "norm_u_minusN", "norm_Pu_nu", "norm_u_minusNn", "norm_Au0",
                  "ratio", "residual_expansion", "residual_direct", "min_im_w0",
                  "t0_anchor", "usable_lo", "usable_hi", "wall_ms"]

PHASE_PREFIX = ["t", "re_w0", "im_w0"]
FIELD_SLICE_COLUMNS = ["t", "x", "abs_u"]


def _read_csv(path: str) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.array(rows, dtype=float)


def read_report(path: str):
    header, rows = _read_csv(path)
    if header != REPORT_COLUMNS:
        raise SchemaError(f"{path}: unexpected columns {header}")
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise TooFewRows(f"{path}: no data rows")
    return {name: rows[:, i] for i, name in enumerate(header)}


def read_summary(path: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    for key in ("verdict", "params", "model"):
        if key not in data:
            raise SchemaError(f"{path}: missing key {key!r}")
    return data


def read_phase(path: str):
    header, rows = _read_csv(path)
    if header[:3] != PHASE_PREFIX or "eigmin_im_w20" not in header:
        raise SchemaError(f"{path}: unexpected phase columns {header}")
    if rows.shape[0] < 2:
        raise TooFewRows(f"{path}: too few samples")
    cols = {name: rows[:, i] for i, name in enumerate(header)}
    cols["_x0_names"] = [h for h in header if h.startswith("x0_")]
    return cols


def read_field_slice(path: str):
    header, rows = _read_csv(path)
    if header != FIELD_SLICE_COLUMNS:
        raise SchemaError(f"{path}: unexpected columns {header}")
    t = np.unique(rows[:, 0])
    x = np.unique(rows[:, 1])
    if len(t) * len(x) != rows.shape[0]:
        raise SchemaError(f"{path}: slice is not a complete (t, x) grid")
    grid = rows[:, 2].reshape(len(t), len(x))
    return t, x, grid


def find_runs(run_dir: str):
    """Locate report/summary plus per-lambda phase and slice dumps."""
    out = {"report": os.path.join(run_dir, "report.csv"),
           "summary": os.path.join(run_dir, "summary.json"),
           "phase": {}, "slice": {}}
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("phase_") and name.endswith(".csv"):
            out["phase"][name[6:-4]] = os.path.join(run_dir, name)
        if name.startswith("field_slice_") and name.endswith(".csv"):
            out["slice"][name[12:-4]] = os.path.join(run_dir, name)
    return out
