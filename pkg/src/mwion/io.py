"""CSV and JSON readers and writers for measurement files and reports.

Floats are written with ``repr`` so values round-trip exactly and output is
byte-stable across runs.
"""
from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .fieldmap import ShiftMeasurement
from .fluor import CountHistogram

SHIFT_MAP_HEADER = ("dx_m", "dz_m", "shift_hz", "sigma_hz")
HISTOGRAM_HEADER = ("phase_rad", "count_value", "occurrences")
SCAN_HEADER = ("offset_hz", "signal", "sigma")
PARITY_HEADER = ("phi_rad", "parity", "sigma")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_rows(path, header):
    """Yield (line number, row) after checking the header."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", path, 1) from None
        got = tuple(c.strip() for c in first)
        if got != tuple(header):
            raise DataFormatError(f"header {got} does not match {tuple(header)}", path, 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            yield reader.line_num, [c.strip() for c in row]


def _floats(path, line, fields):
    try:
        vals = [float(f) for f in fields]
    except ValueError:
        raise DataFormatError(f"non-numeric field in {fields}", path, line) from None
    if not all(math.isfinite(v) for v in vals):
        raise DataFormatError(f"non-finite value in {fields}", path, line)
    return vals


def read_shift_map(path) -> list[ShiftMeasurement]:
    out = []
    for line, row in _read_rows(path, SHIFT_MAP_HEADER):
        dx, dz, shift, sigma = _floats(path, line, row)
        if not sigma > 0:
            raise DataFormatError(f"sigma_hz must be positive, got {sigma!r}", path, line)
        out.append(ShiftMeasurement((dx, dz), shift, sigma, line=line))
    if not out:
        raise DataFormatError("no data rows", path, 2)
    return out


def write_shift_map(path, measurements) -> None:
    write_csv(
        path,
        SHIFT_MAP_HEADER,
        ((m.displacement[0], m.displacement[1], m.shift, m.uncertainty) for m in measurements),
    )


def read_histograms(path) -> list[CountHistogram]:
    """Histograms grouped by phase, in order of first appearance."""
    groups: OrderedDict[float, dict[int, int]] = OrderedDict()
    for line, row in _read_rows(path, HISTOGRAM_HEADER):
        phase, value, occ = _floats(path, line, row)
        if value < 0 or value != int(value) or occ < 0 or occ != int(occ):
            raise DataFormatError("count_value and occurrences must be non-negative integers", path, line)
        bins = groups.setdefault(phase, {})
        if int(value) in bins:
            raise DataFormatError(f"duplicate count_value {int(value)} at phase {phase!r}", path, line)
        bins[int(value)] = int(occ)
    hists = []
    for phase, bins in groups.items():
        counts = np.zeros(max(bins) + 1)
        for k, n in bins.items():
            counts[k] = n
        hists.append(CountHistogram(counts, phase))
    return hists


def write_histograms(path, histograms) -> None:
    rows = []
    for h in histograms:
        for k, n in enumerate(h.counts):
            rows.append((h.phase, k, int(n) if not h.expected else float(n)))
    write_csv(path, HISTOGRAM_HEADER, rows)


def read_scan(path):
    """(offsets, signal, sigma) arrays from a sideband-scan CSV."""
    rows = [_floats(path, line, row) for line, row in _read_rows(path, SCAN_HEADER)]
    if not rows:
        raise DataFormatError("no data rows", path, 2)
    return tuple(np.array(col) for col in zip(*rows))


def to_jsonable(obj):
    """Plain Python structure with non-finite floats spelled as strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")
