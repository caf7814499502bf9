"""CSV ingestion: encoding of categorical and numeric columns.

Policy: rows with a ``?`` in any field are dropped, the configured columns
are excluded, categorical values are one-hot encoded in first-seen order
and numeric columns are standardized with statistics from the training
rows only. The label is 1 when it matches the positive value (a trailing
period, as in the census test file, is ignored).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from privfair.errors import EmptyDataset, MissingColumn, UnparseableRow

log = logging.getLogger(__name__)

MISSING_TOKEN = "?"


@dataclass
class EncodedTable:
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    numeric: np.ndarray
    feature_names: list[str]
    metadata: dict = field(default_factory=dict)

    @property
    def group_count(self) -> int:
        return len(self.metadata["group_values"])

    def __len__(self):
        return self.labels.shape[0]


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _normalize_label(s: str) -> str:
    return s.strip().rstrip(".")


def _clean_rows(header, rows):
    """Strip fields, skip blank lines and drop rows holding the missing token."""
    width = len(header)
    kept, dropped = [], 0
    for i, row in enumerate(rows):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise UnparseableRow(i, f"expected {width} fields, got {len(row)}")
        row = [v.strip() for v in row]
        if MISSING_TOKEN in row:
            dropped += 1
            continue
        kept.append(row)
    if not kept:
        raise EmptyDataset("no usable rows")
    return kept, dropped


def encode_rows(
    header,
    rows,
    group_column: str,
    label_column: str,
    positive_label: str,
    drop_columns=(),
) -> EncodedTable:
    """Encode string rows into a numeric table (numeric columns left unscaled).

    Raises:
        MissingColumn: the group or label column is absent.
        UnparseableRow: a row has the wrong number of fields.
        EmptyDataset: no usable rows remain.
    """
    header = [h.strip() for h in header]
    for col in (group_column, label_column):
        if col not in header:
            raise MissingColumn(f"column {col!r} not found")
    kept, dropped = _clean_rows(header, rows)
    cols = list(zip(*kept))
    gi, li = header.index(group_column), header.index(label_column)
    group_values: list[str] = []
    for v in cols[gi]:
        if v not in group_values:
            group_values.append(v)
    if len(group_values) < 2:
        raise EmptyDataset("the group column has a single value")
    gidx = {v: j for j, v in enumerate(group_values)}
    groups = np.array([gidx[v] for v in cols[gi]], dtype=np.int64)
    positive = _normalize_label(positive_label)
    labels = np.array([_normalize_label(v) == positive for v in cols[li]], dtype=np.int64)

    blocks, names, numeric, categories = [], [], [], {}
    skip = {group_column, label_column, *drop_columns}
    for j, name in enumerate(header):
        if name in skip:
            continue
        values = cols[j]
        if all(_is_number(v) for v in values):
            blocks.append(np.array(values, dtype=float)[:, None])
            names.append(name)
            numeric.append(True)
        else:
            levels: list[str] = []
            for v in values:
                if v not in levels:
                    levels.append(v)
            idx = {v: c for c, v in enumerate(levels)}
            onehot = np.zeros((len(values), len(levels)))
            onehot[np.arange(len(values)), [idx[v] for v in values]] = 1.0
            blocks.append(onehot)
            names += [f"{name}={v}" for v in levels]
            numeric += [False] * len(levels)
            categories[name] = levels
    X = np.hstack(blocks) if blocks else np.zeros((len(kept), 0))
    log.info("ingested %d rows (%d dropped for missing values)", len(kept), dropped)
    metadata = {
        "rows": len(kept),
        "dropped_missing": dropped,
        "group_column": group_column,
        "group_values": group_values,
        "label_column": label_column,
        "positive_label": positive,
        "dropped_columns": [c for c in drop_columns if c in header],
        "categories": categories,
        "columns": header,
    }
    return EncodedTable(X, labels, groups, np.array(numeric, dtype=bool), names, metadata)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{path} is empty")
        return header, list(reader)


def ingest_csv(path, group_column, label_column, positive_label, drop_columns=(), train_index=None) -> EncodedTable:
    """Read and encode a CSV, then standardize numeric columns on ``train_index`` rows."""
    header, rows = read_csv(path)
    table = encode_rows(header, rows, group_column, label_column, positive_label, drop_columns)
    return standardize(table, train_index)


def scaling_stats(X: np.ndarray, numeric: np.ndarray):
    mean = np.where(numeric, X.mean(axis=0), 0.0)
    sd = np.where(numeric, X.std(axis=0), 1.0)
    return mean, np.where(sd > 0, sd, 1.0)


def standardize(table: EncodedTable, train_index=None) -> EncodedTable:
    """Return a copy with numeric columns scaled to mean 0, sd 1 on the training rows."""
    train = table.features if train_index is None else table.features[train_index]
    mean, sd = scaling_stats(train, table.numeric)
    meta = dict(table.metadata, scale_mean=mean.tolist(), scale_sd=sd.tolist())
    return EncodedTable((table.features - mean) / sd, table.labels, table.groups, table.numeric,
                        table.feature_names, meta)


def apply_encoding(header, rows, metadata) -> EncodedTable:
    """Encode new rows with the categories, group map and scaling stored in ``metadata``.

    Unseen categorical levels encode as all zeros.
    """
    header = [h.strip() for h in header]
    missing = [c for c in metadata["columns"] if c not in header]
    if missing:
        raise MissingColumn(f"columns {missing} not found")
    kept, _ = _clean_rows(header, rows)
    gi, li = header.index(metadata["group_column"]), header.index(metadata["label_column"])
    gmap = {v: j for j, v in enumerate(metadata["group_values"])}
    try:
        groups = np.array([gmap[r[gi]] for r in kept], dtype=np.int64)
    except KeyError as exc:
        raise UnparseableRow(-1, f"unknown group value {exc}") from None
    labels = np.array([_normalize_label(r[li]) == metadata["positive_label"] for r in kept], dtype=np.int64)
    skip = {metadata["group_column"], metadata["label_column"], *metadata["dropped_columns"]}
    blocks, names, numeric = [], [], []
    for name in metadata["columns"]:
        if name in skip:
            continue
        j = header.index(name)
        if name in metadata["categories"]:
            levels = metadata["categories"][name]
            idx = {v: c for c, v in enumerate(levels)}
            onehot = np.zeros((len(kept), len(levels)))
            for i, r in enumerate(kept):
                if r[j] in idx:
                    onehot[i, idx[r[j]]] = 1.0
            blocks.append(onehot)
            names += [f"{name}={v}" for v in levels]
            numeric += [False] * len(levels)
        else:
            try:
                blocks.append(np.array([r[j] for r in kept], dtype=float)[:, None])
            except ValueError as exc:
                raise UnparseableRow(-1, f"non-numeric value in {name}: {exc}") from None
            names.append(name)
            numeric.append(True)
    X = np.hstack(blocks) if blocks else np.zeros((len(kept), 0))
    X = (X - np.asarray(metadata["scale_mean"])) / np.asarray(metadata["scale_sd"])
    return EncodedTable(X, labels, groups, np.array(numeric, dtype=bool), names, metadata)
