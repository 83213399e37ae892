"""File formats: datasets, configs and exported curves.

All CSV numbers are written with 17 significant digits so that they
round-trip exactly. Files are written to a temporary sibling and renamed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import Curve, EventTimes
from .estimate import AcerFit
from .simulate import Dataset, Trial

EVENTS_HEADER = ["trial_id", "z", "stream", "time"]
TRIALS_HEADER = ["trial_id", "z"]
EVENTS_FILE = "events.csv"
TRIALS_FILE = "trials.csv"
META_FILE = "metadata.json"


class ParseError(ValueError):
    pass


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON encoding of a config."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def dump_json(path, obj) -> Path:
    return write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Datasets

def dataset_tables(data: Dataset) -> tuple[str, str]:
    """CSV text of the events table and the trials table."""
    events, trials = [], []
    for i, tr in enumerate(data.trials):
        trials.append([i, tr.z])
        for stream, ev in (("N", tr.n_events), ("Y", tr.y_events)):
            events.extend([i, tr.z, stream, fmt(t)] for t in ev.times)
    return _csv_text(EVENTS_HEADER, events), _csv_text(TRIALS_HEADER, trials)


def write_dataset(data: Dataset, directory, extra_meta: dict | None = None) -> dict:
    directory = Path(directory)
    ev_text, tr_text = dataset_tables(data)
    meta = dict(data.metadata)
    meta["horizon"] = data.horizon
    meta["m"] = len(data)
    if extra_meta:
        meta.update(extra_meta)
    write_atomic(directory / EVENTS_FILE, ev_text)
    write_atomic(directory / TRIALS_FILE, tr_text)
    dump_json(directory / META_FILE, meta)
    return meta


def _read_rows(path: Path, header: list[str]) -> list[list[str]]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError(f"{path}: empty file")
    if [h.strip() for h in rows[0]] != header:
        raise ParseError(f"{path}: expected header {','.join(header)}, got {','.join(rows[0])}")
    return [r for r in rows[1:] if r]


def _int(value: str, path: Path, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"{path}:{line}: expected an integer, got {value!r}") from None


def read_dataset(path, horizon: float | None = None) -> Dataset:
    """Load a dataset from a directory or from the path of its events CSV.

    ``trials.csv`` next to the events file is used when present, so trials
    with no events survive the round trip. The horizon comes from the
    argument, else ``metadata.json``, else the latest event time.
    """
    path = Path(path)
    events_path = path / EVENTS_FILE if path.is_dir() else path
    base = events_path.parent
    rows = _read_rows(events_path, EVENTS_HEADER)
    levels: dict[int, int] = {}
    times: dict[tuple[int, str], list[float]] = {}
    for k, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise ParseError(f"{events_path}:{k}: expected 4 fields, got {len(row)}")
        tid, z = _int(row[0], events_path, k), _int(row[1], events_path, k)
        stream = row[2].strip()
        if stream not in ("N", "Y"):
            raise ParseError(f"{events_path}:{k}: stream must be N or Y, got {stream!r}")
        try:
            t = float(row[3])
        except ValueError:
            raise ParseError(f"{events_path}:{k}: bad time {row[3]!r}") from None
        if levels.setdefault(tid, z) != z:
            raise ParseError(f"{events_path}:{k}: trial {tid} has conflicting levels")
        times.setdefault((tid, stream), []).append(t)
    trials_path = base / TRIALS_FILE
    if trials_path.exists():
        for k, row in enumerate(_read_rows(trials_path, TRIALS_HEADER), start=2):
            if len(row) != 2:
                raise ParseError(f"{trials_path}:{k}: expected 2 fields, got {len(row)}")
            tid, z = _int(row[0], trials_path, k), _int(row[1], trials_path, k)
            if levels.setdefault(tid, z) != z:
                raise ParseError(f"{trials_path}:{k}: trial {tid} has conflicting levels")
    if not levels:
        raise ParseError(f"{events_path}: no trials")
    meta = {}
    meta_path = base / META_FILE
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{meta_path}: {exc}") from None
    if horizon is None:
        horizon = meta.get("horizon")
    if horizon is None:
        horizon = max((max(v) for v in times.values()), default=0.0) or 1.0
    trials = []
    for tid in sorted(levels):
        try:
            n_ev = EventTimes(np.sort(times.get((tid, "N"), [])))
            y_ev = EventTimes(np.sort(times.get((tid, "Y"), [])))
            trials.append(Trial(levels[tid], n_ev, y_ev))
        except ValueError as exc:
            raise ParseError(f"trial {tid}: {exc}") from None
    try:
        return Dataset(tuple(trials), float(horizon), meta)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


# ---------------------------------------------------------------------------
# Curves

def curve_csv(curve: Curve, name: str, time_name: str = "delta") -> str:
    return _csv_text([time_name, name], ([fmt(t), fmt(v)] for t, v in zip(curve.times, curve.values)))


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column CSV back into (times, values)."""
    path = Path(path)
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if len(rows) < 2:
        raise ParseError(f"{path}: no data rows")
    arr = np.array([[float(x) for x in r] for r in rows[1:] if r])
    return arr[:, 0], arr[:, 1]


def write_fit(fit: AcerFit, directory, stem: str, extra: dict | None = None) -> tuple[Path, Path]:
    directory = Path(directory)
    doc = fit.to_dict()
    if extra:
        doc.update(extra)
    j = dump_json(directory / f"{stem}.json", doc)
    c = write_atomic(directory / f"{stem}.csv", curve_csv(fit.acer, fit.curve_name))
    return j, c


def spectrum_csv(spectrum) -> str:
    return _csv_text(["freq", "re", "im"],
                     ([fmt(f), fmt(r), fmt(i)] for f, r, i in zip(spectrum.freqs, spectrum.re, spectrum.im)))
