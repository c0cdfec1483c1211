"""CSV and JSON serialization of subject records and posterior draws.

Files are UTF-8, comma-delimited, with a header row. Floats are written
with 17 significant digits so that reading them back is exact. Missing
values are rejected.
"""
from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .model.records import ModelParams, SubjectError, SubjectRecord, validate_subjects

__all__ = [
    "DataError",
    "fmt",
    "write_subjects",
    "read_subjects",
    "write_truth",
    "write_draws",
    "read_draws",
    "write_table",
]


class DataError(ValueError):
    """A data file is malformed or violates a record invariant."""


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.17g}"


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def write_subjects(subjects, directory):
    """Write ``longitudinal.csv`` and ``survival.csv`` into ``directory``."""
    directory = Path(directory)
    p = subjects[0].x.shape[1]
    q = subjects[0].w.shape[0]
    long_rows, surv_rows = [], []
    for subj in subjects:
        for j in range(subj.n_visits):
            long_rows.append([subj.id, subj.s[j], subj.y[j], *subj.x[j]])
        surv_rows.append([subj.id, subj.t_obs, int(subj.event), *subj.w])
    write_table(directory / "longitudinal.csv",
                ["subject_id", "visit_time", "y"] + [f"x{k + 1}" for k in range(p)], long_rows)
    write_table(directory / "survival.csv",
                ["subject_id", "time", "event"] + [f"w{k + 1}" for k in range(q)], surv_rows)


def _rows(path, fixed):
    """Yield ``(line_number, id, floats, extra_column_names)`` after checking the header."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path} line 1: {exc}") from None
        if [h.strip() for h in header[:len(fixed)]] != fixed:
            raise DataError(f"{path} line 1: header must start with {','.join(fixed)}")
        width = len(header)
        extra = [h.strip() for h in header[len(fixed):]]
        try:
            for row in rd:
                line = rd.line_num
                if not row:
                    continue
                if len(row) != width:
                    raise DataError(f"{path} line {line}: expected {width} fields, got {len(row)}")
                if any(c.strip() == "" for c in row):
                    raise DataError(f"{path} line {line}: missing value")
                sid = row[0].strip()
                try:
                    vals = [float(c) for c in row[1:]]
                except ValueError:
                    raise DataError(f"{path} line {line}: non-numeric value") from None
                if not all(math.isfinite(v) for v in vals):
                    raise DataError(f"{path} line {line}: non-finite value")
                yield line, sid, vals, extra
        except csv.Error as exc:
            raise DataError(f"{path} line {rd.line_num}: {exc}") from None


def read_subjects(longitudinal, survival) -> list:
    """Parse the two CSV files into validated :class:`SubjectRecord` objects.

    Subjects keep the order of the survival file. Visits must appear in
    increasing time within each subject.
    """
    visits = OrderedDict()
    p = None
    for line, sid, vals, extra in _rows(longitudinal, ["subject_id", "visit_time", "y"]):
        p = len(extra)
        visits.setdefault(sid, []).append((line, vals))
    surv = OrderedDict()
    for line, sid, vals, extra in _rows(survival, ["subject_id", "time", "event"]):
        if sid in surv:
            raise DataError(f"{survival} line {line}: duplicate subject {sid}")
        if vals[1] not in (0.0, 1.0):
            raise DataError(f"{survival} line {line}: event must be 0 or 1")
        surv[sid] = vals
    if not surv:
        raise DataError(f"{survival}: no subjects")
    unknown = [sid for sid in visits if sid not in surv]
    if unknown:
        raise DataError(f"subject {unknown[0]}: visits in {longitudinal} but no survival row")
    subjects = []
    for sid, vals in surv.items():
        rows = visits.get(sid, [])
        if not rows:
            raise DataError(f"subject {sid}: has no longitudinal visits")
        for (l0, a), (l1, b) in zip(rows, rows[1:]):
            if b[0] <= a[0]:
                raise DataError(f"subject {sid}: visit times not increasing at "
                                f"{longitudinal} line {l1}")
        arr = np.array([r[1] for r in rows]).reshape(len(rows), 2 + p)
        subjects.append(SubjectRecord(
            id=sid, x=arr[:, 2:], w=vals[2:], s=arr[:, 0], y=arr[:, 1],
            t_obs=vals[0], event=vals[1] == 1.0,
        ))
    try:
        validate_subjects(subjects)
    except SubjectError as exc:
        raise DataError(str(exc)) from None
    return subjects


def write_truth(path, params: ModelParams, **extra):
    rec = {"params": params.to_dict(), "named": params.named(), **extra}
    Path(path).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_draws(path, draws):
    """One row per draw: ``chain, iteration`` then the constrained parameters."""
    rows = []
    for c in range(draws.n_chains):
        for i in range(draws.n_samples):
            rows.append([c + 1, i + 1, *draws.values[c, i]])
    write_table(path, ["chain", "iteration", *draws.names], rows)


def read_draws(path):
    """Return ``(names, values)`` with ``values`` shaped ``(chains, samples, dim)``.

    Chains must all have the same number of draws.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if not header or header[:2] != ["chain", "iteration"] or len(header) < 3:
            raise DataError(f"{path} line 1: header must be chain,iteration,<parameters>")
        names = header[2:]
        chains = OrderedDict()
        for row in rd:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path} line {rd.line_num}: expected {len(header)} fields, "
                                f"got {len(row)}")
            try:
                c = int(row[0])
                vals = [float(v) for v in row[2:]]
            except ValueError:
                raise DataError(f"{path} line {rd.line_num}: non-numeric value") from None
            chains.setdefault(c, []).append(vals)
    if not chains:
        raise DataError(f"{path}: no draws")
    lens = {len(v) for v in chains.values()}
    if len(lens) != 1:
        raise DataError(f"{path}: chains have different numbers of draws")
    return names, np.array([chains[c] for c in chains], dtype=float)
