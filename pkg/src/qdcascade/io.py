"""CSV/JSON serialization of histograms, tomography series and reports.

Floats are written with ``repr`` so a write -> read -> write cycle is
byte-identical.
"""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .cascade import (
    CascadeParams,
    HistogramSet,
    TimeGrid,
    accidental_background,
    oversampling_factor,
    pair_count,
)
from .errors import ValidationError
from .polarization import BASIS_PAIRS, LABELS
from .tomography import TomographyResult, TomographySeries

HIST_HEADER = ["basis_x", "basis_xx", "bin_start_ps", "counts"]
SERIES_HEADER = ["window_center_ps", "concurrence", "c_low", "c_high", "total_counts"]
CURVE_HEADER = ["t_ps", "concurrence", "c_low", "c_high"]
BASIS_ORDER = ["HH", "HV", "VH", "VV"]


def fmt(x):
    """Shortest round-trip text for a number; integers stay integral."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dump_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(obj), indent=2, default=_json_default, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# -- histograms ---------------------------------------------------------------


def histogram_metadata(hist):
    meta = hist.params.to_dict() if hist.params is not None else {}
    meta["histogram_kind"] = hist.kind
    if hist.params is not None:
        meta["derived"] = {
            "pair_count": pair_count(hist.params),
            "accidental_per_bin": accidental_background(hist.params),
            "oversampling_factor": oversampling_factor(hist.params),
            "n_bins": hist.grid.n_bins,
        }
    return meta


def write_histograms(hist, csv_path, meta_path=None):
    """Write the long-format CSV and, optionally, the metadata sidecar."""
    starts = [fmt(s) for s in hist.grid.bin_start]
    integral = hist.kind == "sampled"
    rows = []
    for k, (i, j) in enumerate(BASIS_PAIRS):
        col = hist.counts[:, k]
        for s, c in zip(starts, col):
            rows.append([i, j, s, fmt(int(c)) if integral else fmt(c)])
    paths = [_write_csv(csv_path, HIST_HEADER, rows)]
    if meta_path is not None:
        paths.append(dump_json(histogram_metadata(hist), meta_path))
    return paths


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"row {row}, column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise ValidationError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def read_histograms(csv_path, meta_path=None):
    """Read and validate a histogram CSV (plus optional metadata sidecar)."""
    csv_path = Path(csv_path)
    series = {}
    integral = True
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HIST_HEADER:
            raise ValidationError(f"{csv_path}: header must be {','.join(HIST_HEADER)}, got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HIST_HEADER):
                raise ValidationError(f"row {row_no}: expected {len(HIST_HEADER)} fields, got {len(row)}")
            bx, bxx, start_txt, count_txt = row
            for col, lab in (("basis_x", bx), ("basis_xx", bxx)):
                if lab not in LABELS:
                    raise ValidationError(f"row {row_no}, column {col!r}: unknown polarization {lab!r}")
            start = _parse_float(start_txt, row_no, "bin_start_ps")
            count = _parse_float(count_txt, row_no, "counts")
            if count < 0:
                raise ValidationError(f"row {row_no}, column 'counts': negative count {count_txt}")
            integral &= count_txt.lstrip("-").isdigit()
            bins = series.setdefault((bx, bxx), {})
            if start in bins:
                raise ValidationError(f"row {row_no}: duplicate bin {start_txt} for pair {bx}{bxx}")
            bins[start] = count

    missing = [f"({i},{j})" for i, j in BASIS_PAIRS if (i, j) not in series]
    if missing:
        raise ValidationError(f"missing basis pair(s): {', '.join(missing)}")
    ref = sorted(series[BASIS_PAIRS[0]])
    for pair in BASIS_PAIRS:
        if sorted(series[pair]) != ref:
            raise ValidationError(
                f"pair ({pair[0]},{pair[1]}) has {len(series[pair])} bins that do not match "
                f"the {len(ref)} bins of ({BASIS_PAIRS[0][0]},{BASIS_PAIRS[0][1]})"
            )
    starts = np.array(ref)
    if starts.size < 2:
        raise ValidationError("histogram needs at least two bins")
    steps = np.diff(starts)
    width = float(steps[0])
    if width <= 0 or np.max(np.abs(steps - width)) > 1e-9 * max(1.0, abs(width)) + 1e-9:
        raise ValidationError("bin_start_ps values are not uniformly spaced")
    counts = np.array([[series[p][s] for p in BASIS_PAIRS] for s in ref])

    params = None
    kind = "sampled" if integral else "expected"
    if meta_path is not None and Path(meta_path).exists():
        meta = load_json(meta_path)
        kind = meta.pop("histogram_kind", kind)
        meta.pop("derived", None)
        params = CascadeParams.from_dict(meta)
    grid = TimeGrid(float(starts[0]), width, int(starts.size))
    return HistogramSet(grid, counts, params, kind=kind)


# -- tomography -----------------------------------------------------------------


def window_document(res):
    return {
        "window_center_ps": res.window_center,
        "window_width_ps": res.window_width,
        "bin_edges_ps": list(res.edges),
        "basis_order": BASIS_ORDER,
        "real": np.real(res.rho).tolist(),
        "imag": np.imag(res.rho).tolist(),
        "rho_dc_real": np.real(res.rho_dc).tolist(),
        "rho_dc_imag": np.imag(res.rho_dc).tolist(),
        "concurrence": res.concurrence,
        "c_low": res.concurrence_low,
        "c_high": res.concurrence_high,
        "total_counts": res.total_counts,
        "mc_concurrence": None if res.mc_concurrence is None else list(res.mc_concurrence),
        "mc_totals": None if res.mc_totals is None else list(res.mc_totals),
    }


def write_tomography(series, directory):
    """``series.csv`` plus ``windows/window_NNNN.json`` per reconstructed window."""
    directory = Path(directory)
    rows = [
        [fmt(r.window_center), fmt(r.concurrence), fmt(r.concurrence_low), fmt(r.concurrence_high), fmt(r.total_counts)]
        for r in series
    ]
    paths = [_write_csv(directory / "series.csv", SERIES_HEADER, rows)]
    for k, r in enumerate(series):
        paths.append(dump_json(window_document(r), directory / "windows" / f"window_{k:04d}.json"))
    return paths


def _array(obj):
    return None if obj is None else np.array([np.nan if v is None else v for v in obj], dtype=float)


def result_from_document(doc):
    rho = np.array(doc["real"]) + 1j * np.array(doc["imag"])
    rho_dc = np.array(doc["rho_dc_real"]) + 1j * np.array(doc["rho_dc_imag"])
    return TomographyResult(
        window_center=doc["window_center_ps"],
        window_width=doc["window_width_ps"],
        rho=rho,
        rho_dc=rho_dc,
        concurrence=doc["concurrence"],
        concurrence_low=doc["c_low"],
        concurrence_high=doc["c_high"],
        total_counts=doc["total_counts"],
        edges=tuple(doc.get("bin_edges_ps", (math.nan, math.nan))),
        mc_concurrence=_array(doc.get("mc_concurrence")),
        mc_totals=_array(doc.get("mc_totals")),
    )


def read_tomography(directory):
    directory = Path(directory)
    files = sorted((directory / "windows").glob("window_*.json"))
    if not files:
        raise ValidationError(f"no window documents under {directory / 'windows'}")
    return TomographySeries([result_from_document(load_json(f)) for f in files])


# -- analysis reports ---------------------------------------------------------------


def write_curve(series, path):
    rows = [[fmt(r.window_center), fmt(r.concurrence), fmt(r.concurrence_low), fmt(r.concurrence_high)] for r in series]
    return _write_csv(path, CURVE_HEADER, rows)


def write_long_format(named_series, path):
    rows = []
    for name, series in named_series:
        for r in series:
            rows.append(
                [name, fmt(r.window_center), fmt(r.concurrence), fmt(r.concurrence_low), fmt(r.concurrence_high)]
            )
    return _write_csv(path, ["scenario"] + CURVE_HEADER, rows)


def write_table(path, header, rows):
    return _write_csv(path, header, [[fmt(v) if isinstance(v, (int, float, np.number)) else v for v in r] for r in rows])
