"""Dataset serialization, standardization, run reports and figure data.

Matrices travel as comma-separated files with one header row and decimal
values printed at 17 significant digits, which round-trips float64 exactly.
Run reports are JSON documents validated against a published schema; every
float in a report is finite or explicitly null.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import validate as _validate_schema

from .datagen import TRAIN, DatasetPair, GroundTruth
from .errors import DataError, ParseError

REPORT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# CSV matrices


def save_matrix_csv(path: str | Path, matrix: np.ndarray,
                    header: list[str] | None = None) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError("save_matrix_csv expects a 2-D matrix")
    if not np.all(np.isfinite(matrix)):
        raise DataError("refusing to serialize non-finite values")
    if header is None:
        header = [f"c{j}" for j in range(matrix.shape[1])]
    if len(header) != matrix.shape[1]:
        raise DataError("header length does not match column count")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file", str(path), 1)
    header = lines[0].split(",")
    ncols = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            raise ParseError(f"{path}:{lineno}: expected {ncols} columns, "
                             f"got {len(parts)}", str(path), lineno)
        try:
            row = [float(p) for p in parts]
        except ValueError as err:
            raise ParseError(f"{path}:{lineno}: {err}", str(path), lineno) from err
        if not all(np.isfinite(row)):
            raise ParseError(f"{path}:{lineno}: non-finite value", str(path), lineno)
        rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows", str(path), 1)
    return np.array(rows, dtype=np.float64), header


def load_pair_csv(path_x: str | Path, path_y: str | Path) -> DatasetPair:
    """Row-aligned pair from two matrix files; split is left unassigned."""
    x, _ = load_matrix_csv(path_x)
    y, _ = load_matrix_csv(path_y)
    if x.shape[0] != y.shape[0]:
        raise DataError(f"row counts differ: {path_x} has {x.shape[0]}, "
                        f"{path_y} has {y.shape[0]}")
    return DatasetPair(x, y)


def save_pair(dirpath: str | Path, pair: DatasetPair) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(dirpath / "X.csv", pair.x)
    save_matrix_csv(dirpath / "Y.csv", pair.y)


def save_ground_truth(path: str | Path, truth: GroundTruth,
                      split: np.ndarray | None = None) -> None:
    cols = truth.column_names()
    matrix = truth.as_matrix()
    if split is not None:
        cols = cols + ["split"]
        matrix = np.column_stack([matrix, split.astype(np.float64)])
    save_matrix_csv(path, matrix, cols)


# ---------------------------------------------------------------------------
# standardization


@dataclass
class ColumnStats:
    means: np.ndarray
    stds: np.ndarray
    constant_columns_x: list[int]
    constant_columns_y: list[int]
    split_point: int  # X columns come first

    def apply(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        joined = np.hstack([x, y])
        out = (joined - self.means) / self.stds
        return out[:, :self.split_point], out[:, self.split_point:]

    def invert(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        joined = np.hstack([x, y])
        out = joined * self.stds + self.means
        return out[:, :self.split_point], out[:, self.split_point:]


def standardize(pair: DatasetPair) -> tuple[DatasetPair, ColumnStats]:
    """Center/scale every column by its train-split statistics (all rows if
    no split is assigned); zero-variance columns pass through untouched and
    are recorded."""
    if pair.split is not None:
        ref_rows = pair.rows(TRAIN)
        if len(ref_rows) == 0:
            raise DataError("standardize needs a non-empty train split")
    else:
        ref_rows = np.arange(pair.n)
    joined = np.hstack([pair.x, pair.y])
    ref = joined[ref_rows]
    means = ref.mean(axis=0)
    stds = ref.std(axis=0)
    constant = stds == 0.0
    means[constant] = 0.0
    stds[constant] = 1.0
    dx = pair.x.shape[1]
    stats = ColumnStats(
        means=means, stds=stds,
        constant_columns_x=[int(j) for j in np.flatnonzero(constant[:dx])],
        constant_columns_y=[int(j) for j in np.flatnonzero(constant[dx:])],
        split_point=dx)
    new_x, new_y = stats.apply(pair.x, pair.y)
    return DatasetPair(new_x, new_y, pair.split, pair.ground_truth), stats


# ---------------------------------------------------------------------------
# grid layouts and anomaly grids


@dataclass
class GridLayout:
    rows: int
    cols: int
    channel_x: str = "x"
    channel_y: str = "y"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DataError("grid layout needs positive dimensions")

    @property
    def dim(self) -> int:
        return self.rows * self.cols

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "GridLayout":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def anomaly_grids(model, pair: DatasetPair, layout: GridLayout, neuron: int,
                  k: int, side: str = "y",
                  informative: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean input over the k samples with the highest (and, separately, the
    lowest) value of one macrovariable, minus the full-dataset mean, shaped
    to the grid layout."""
    data = pair.y if side == "y" else pair.x
    half = model.net_y if side == "y" else model.net_x
    if data.shape[1] != layout.dim:
        raise DataError(f"layout {layout.rows}x{layout.cols} does not match "
                        f"sample dimensionality {data.shape[1]}")
    if not 1 <= k <= pair.n:
        raise DataError(f"k must be in [1, {pair.n}], got {k}")
    if informative is False:
        warnings.warn(f"neuron {neuron} of side {side} is not informative; "
                      "its anomaly grid is likely noise")
    values = half.encode_mean(data)[:, neuron]
    order = np.argsort(values, kind="stable")
    base = data.mean(axis=0)
    lo = data[order[:k]].mean(axis=0) - base
    hi = data[order[-k:]].mean(axis=0) - base
    shape = (layout.rows, layout.cols)
    return hi.reshape(shape), lo.reshape(shape)


def emit_anomaly_grid(path_high: str | Path, path_low: str | Path, model,
                      pair: DatasetPair, layout: GridLayout, neuron: int,
                      k: int, side: str = "y",
                      informative: bool | None = None) -> None:
    hi, lo = anomaly_grids(model, pair, layout, neuron, k, side, informative)
    header = [f"c{j}" for j in range(layout.cols)]
    save_matrix_csv(path_high, hi, header)
    save_matrix_csv(path_low, lo, header)


# ---------------------------------------------------------------------------
# residual scatter emission

_SCATTER_GROUPS = ("fwd_raw", "rev_raw", "fwd_transformed", "rev_transformed")
_SCATTER_COLS = ("value", "prediction", "counterpart", "residual")


def emit_residual_scatter(path: str | Path, artifacts: dict) -> None:
    """Wide CSV of per-sample scatter data: for both directions, raw and
    transformed, the predicted variable's value, its prediction, the
    predictor (counterpart) and the residual value - prediction."""
    missing = [g for g in _SCATTER_GROUPS if g not in artifacts]
    if missing:
        raise DataError(f"verdict artifacts missing groups {missing}; "
                        "run the verdict with artifact retention on")
    header = []
    columns = []
    n = None
    for group in _SCATTER_GROUPS:
        for col in _SCATTER_COLS:
            header.append(f"{group}_{col}")
            v = np.asarray(artifacts[group][col], dtype=np.float64)
            if n is None:
                n = v.shape[0]
            elif v.shape[0] != n:
                raise DataError("scatter artifact groups have differing lengths")
            columns.append(v)
    save_matrix_csv(path, np.column_stack(columns), header)


# ---------------------------------------------------------------------------
# run reports

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "kind", "seed", "config", "metrics",
                 "timing_seconds"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "kind": {"const": "run_report"},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "timing_seconds": {"type": ["number", "null"]},
        "metrics": {
            "type": "object",
            "required": ["informative_x", "informative_y", "ev_y_from_x",
                         "ev_x_from_y", "cross_ev_y_from_x", "cross_ev_x_from_y",
                         "kl_x", "kl_y", "epochs_run", "early_stopped"],
            "properties": {
                "informative_x": {"type": "integer"},
                "informative_y": {"type": "integer"},
                "ev_y_from_x": {"type": ["number", "null"]},
                "ev_x_from_y": {"type": ["number", "null"]},
                "cross_ev_y_from_x": {"type": ["number", "null"]},
                "cross_ev_x_from_y": {"type": ["number", "null"]},
                "kl_x": {"type": "array", "items": {"type": ["number", "null"]}},
                "kl_y": {"type": "array", "items": {"type": ["number", "null"]}},
                "epochs_run": {"type": "integer"},
                "early_stopped": {"type": "boolean"},
            },
        },
        "loss_history": {
            "type": "object",
            "additionalProperties": {"type": "array",
                                     "items": {"type": ["number", "null"]}},
        },
        "pair_table": {"type": "array", "items": {"type": "object"}},
        "verdicts": {"type": "array", "items": {"type": "object"}},
    },
}


@dataclass
class RunReport:
    seed: int
    config: dict
    metrics: dict
    timing_seconds: float | None = None
    loss_history: dict = field(default_factory=dict)
    pair_table: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION
    kind: str = "run_report"

    def to_dict(self) -> dict:
        return _sanitize_floats(asdict(self))


def _sanitize_floats(obj):
    """Replace non-finite floats by null, recursively."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, (np.floating, np.integer)):
        return _sanitize_floats(obj.item())
    if isinstance(obj, np.ndarray):
        return _sanitize_floats(obj.tolist())
    if isinstance(obj, dict):
        return {k: _sanitize_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize_floats(v) for v in obj]
    return obj


def validate_report(doc: dict) -> None:
    _validate_schema(doc, REPORT_SCHEMA)


def save_report(path: str | Path, report: RunReport) -> None:
    doc = report.to_dict()
    validate_report(doc)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_report(doc)
    return doc
