"""CSV storage for datasets: ``f0,...,f{d-1},label[,t0,...,t{m-1}]``."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .training import Dataset


class CsvFormatError(ValueError):
    pass


def save_csv(data: Dataset, path) -> None:
    header = [f"f{k}" for k in range(data.d)] + ["label"]
    if data.teacher is not None:
        header += [f"t{k}" for k in range(data.m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.X[i]] + [str(int(data.y[i]))]
            if data.teacher is not None:
                row += [repr(float(v)) for v in data.teacher[i]]
            w.writerow(row)


def load_csv(path, m: int | None = None) -> Dataset:
    """Read a dataset; ``m`` defaults to the teacher width or the largest label."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "label" not in header:
        raise CsvFormatError(f"{path}: header has no 'label' column: {','.join(header)}")
    li = header.index("label")
    feats, teach = header[:li], header[li + 1:]
    if feats != [f"f{k}" for k in range(li)]:
        raise CsvFormatError(f"{path}: feature columns must be f0..f{li - 1}, got {','.join(feats)}")
    if teach and teach != [f"t{k}" for k in range(len(teach))]:
        raise CsvFormatError(f"{path}: teacher columns must be t0..t{len(teach) - 1}")
    if m is None:
        m = len(teach) if teach else None
    elif teach and len(teach) != m:
        raise CsvFormatError(f"{path}: {len(teach)} teacher columns for {m} classes")

    X, y, T = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            X.append([float(v) for v in row[:li]])
            label = int(row[li])
            T.append([float(v) for v in row[li + 1:]])
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
        if label < 1 or (m is not None and label > m):
            raise CsvFormatError(f"{path}:{lineno}: label {label} out of range")
        y.append(label)
    if not y:
        raise CsvFormatError(f"{path}: no data rows")
    if m is None:
        m = max(y)
    teacher = None
    if teach:
        teacher = np.array(T, dtype=float)
        bad = np.flatnonzero((teacher < 0).any(axis=1) | (np.abs(teacher.sum(axis=1) - 1) > 1e-6))
        if bad.size:
            raise CsvFormatError(f"{path}:{bad[0] + 2}: teacher row is not a distribution")
        off = np.abs(teacher.sum(axis=1) - 1) > 1e-9
        teacher[off] /= teacher[off].sum(axis=1, keepdims=True)
    return Dataset(np.array(X, dtype=float).reshape(len(y), li), np.array(y), m, teacher=teacher)
