"""CSV ingestion with FRED-style transformation codes and plot-data export."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import TimePanel, standardize_panel
from .msar import companion_eigenvalues
from .pipeline import DrawStore, hpd_interval, parameter_draws, smoothed_state_probabilities

FLOAT_FORMAT = "%.17g"


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class IngestionSpec:
    """Where the data live and how to make each series stationary.

    ``codes`` maps column names to transformation codes; columns absent
    from it use the CSV's ``transform`` row when present, else
    ``default_code``. ``target_code`` applies to the modeled series, which
    is then multiplied by ``target_scale`` (100 turns log differences into
    percent growth).
    """

    path: str
    target: str
    codes: dict = field(default_factory=dict)
    target_code: int = 5
    na_tolerance: float = 0.1
    date_column: str | None = None
    default_code: int = 1
    standardize: bool = True
    include_target: bool = False
    target_scale: float = 1.0

    def __post_init__(self):
        bad = {k: v for k, v in self.codes.items() if int(v) not in range(1, 8)}
        for c in (self.target_code, self.default_code):
            if int(c) not in range(1, 8):
                bad["<default or target>"] = c
        if bad:
            raise ValueError(f"transformation codes must lie in 1..7: {bad}")
        if not 0.0 <= self.na_tolerance <= 1.0:
            raise ValueError("na_tolerance must lie in [0, 1]")


@dataclass
class IngestReport:
    dropped_na: list
    dropped_gaps: list
    trimmed_start: int
    trimmed_end: int
    codes: dict


def transform_series(x, code: int) -> np.ndarray:
    """Apply one transformation code; undefined entries become NaN.

    1 level, 2 first difference, 3 second difference, 4 log, 5 log difference,
    6 second log difference, 7 first difference of the growth rate.
    """
    x = np.asarray(x, dtype=float)
    code = int(code)
    if code in (4, 5, 6):
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)
    out = np.full_like(x, np.nan)
    if code in (1, 4):
        out = x.copy()
    elif code in (2, 5):
        out[1:] = x[1:] - x[:-1]
    elif code in (3, 6):
        out[2:] = x[2:] - 2 * x[1:-1] + x[:-2]
    elif code == 7:
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.full_like(x, np.nan)
            g[1:] = x[1:] / x[:-1] - 1.0
        out[2:] = g[2:] - g[1:-1]
    else:
        raise ValueError(f"unknown transformation code {code}")
    out[~np.isfinite(out)] = np.nan
    return out


def _read_table(spec: IngestionSpec):
    if not os.path.exists(spec.path):
        raise IngestError(f"file not found: {spec.path}")
    try:
        raw = pd.read_csv(spec.path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise IngestError(f"could not parse {spec.path}: {exc}") from exc
    if raw.shape[1] < 2:
        raise IngestError("need a date column and at least one series")
    date_col = spec.date_column or raw.columns[0]
    if date_col not in raw.columns:
        raise IngestError(f"unknown date column {date_col!r}")
    # metadata rows (FRED layout): 'transform' codes and 'factors' flags
    file_codes = {}
    keep = np.ones(len(raw), dtype=bool)
    for i, label in enumerate(raw[date_col].str.strip().str.lower()):
        if label in ("transform", "tcode", "factors"):
            keep[i] = False
            if label != "factors":
                for col in raw.columns:
                    if col != date_col and raw.at[i, col].strip():
                        try:
                            file_codes[col] = int(float(raw.at[i, col]))
                        except ValueError as exc:
                            raise IngestError(f"line {i + 2}: bad transformation code "
                                              f"{raw.at[i, col]!r} for {col}") from exc
    line_no = np.flatnonzero(keep) + 2
    raw = raw[keep].reset_index(drop=True)
    dates = raw[date_col].tolist()
    cols = [c for c in raw.columns if c != date_col]
    values = np.empty((len(cols), len(raw)))
    na_tokens = {"", "na", "nan", "n/a", "null", "."}
    for j, c in enumerate(cols):
        cells = raw[c].str.strip()
        missing = cells.str.lower().isin(na_tokens)
        # numpy parses with correct rounding, so written values read back bit-exactly
        text = cells.where(~missing, "nan").to_numpy(dtype=str)
        try:
            values[j] = text.astype(float)
        except ValueError:
            for i, cell in enumerate(text):
                try:
                    float(cell)
                except ValueError:
                    raise IngestError(f"line {line_no[i]}: non-numeric value {cell!r} "
                                      f"in column {c!r}") from None
    return dates, cols, values, file_codes


def ingest_with_report(spec: IngestionSpec):
    """Like :func:`ingest` but also returns what was dropped or trimmed."""
    dates, cols, values, file_codes = _read_table(spec)
    if spec.target not in cols:
        raise IngestError(f"unknown target column {spec.target!r}")
    unknown = sorted(set(spec.codes) - set(cols))
    if unknown:
        raise IngestError(f"transformation codes given for unknown columns: {', '.join(unknown)}")
    codes = {c: int(spec.codes.get(c, file_codes.get(c, spec.default_code))) for c in cols}
    codes[spec.target] = int(spec.codes.get(spec.target, spec.target_code))
    trans = np.vstack([transform_series(values[j], codes[c]) for j, c in enumerate(cols)])
    ti = cols.index(spec.target)
    target = trans[ti] * spec.target_scale
    if np.all(np.isnan(target)):
        raise IngestError(f"target column {spec.target!r} has no usable values")

    names = [c for c in cols if spec.include_target or c != spec.target]
    rows = [cols.index(c) for c in names]
    X = trans[rows]
    share = np.isnan(X).mean(axis=1)
    ok = share <= spec.na_tolerance
    dropped_na = [n for n, k in zip(names, ok) if not k]
    names = [n for n, k in zip(names, ok) if k]
    X = X[ok]
    if not names:
        raise IngestError("every covariate series exceeds the missing-value tolerance")

    valid = np.vstack([~np.isnan(X), ~np.isnan(target)[None]])
    firsts = [np.flatnonzero(v)[0] if v.any() else len(dates) for v in valid]
    lasts = [np.flatnonzero(v)[-1] if v.any() else -1 for v in valid]
    start, end = max(firsts), min(lasts) + 1
    if end - start < 2:
        raise IngestError("no common sample window after transformation")
    if np.isnan(target[start:end]).any():
        raise IngestError("target has interior missing values")
    window = X[:, start:end]
    gaps = np.isnan(window).any(axis=1)
    dropped_gaps = [n for n, g in zip(names, gaps) if g]
    names = [n for n, g in zip(names, gaps) if not g]
    window = window[~gaps]
    if not names:
        raise IngestError("no covariate series left after removing interior gaps")
    tindex = dates[start:end]
    if spec.standardize:
        panel = standardize_panel(window, names, tindex, target[start:end])
    else:
        panel = TimePanel(window, names, tindex, target[start:end])
    report = IngestReport(dropped_na, dropped_gaps, start, len(dates) - end, codes)
    return panel, report


def ingest(spec: IngestionSpec) -> TimePanel:
    """Read, transform, clean and standardize a CSV panel.

    Series whose missing share exceeds ``na_tolerance`` are dropped; the sample
    is cut to the window where every remaining series and the target are
    observed, and series with gaps inside that window are dropped. The
    target is transformed but never standardized.
    """
    return ingest_with_report(spec)[0]


# --- writers ------------------------------------------------------------------

def write_table(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FORMAT % v if isinstance(v, (float, np.floating)) else v
                        for v in row])
    return str(path)


def write_panel_csv(panel: TimePanel, path, target_name: str = "target") -> str:
    """Write a panel so that ingesting it with code 1 and no standardization reproduces it."""
    header = ["date", target_name] + list(panel.names)
    rows = [["transform"] + ["1"] * (panel.m + 1)]
    for t, d in enumerate(panel.time_index):
        rows.append([d, float(panel.target[t])] + [float(v) for v in panel.series[:, t]])
    return write_table(path, header, rows)


def read_numeric_table(path) -> tuple[list, np.ndarray]:
    """Header and float matrix of a written table (first column kept as text)."""
    frame = pd.read_csv(path, dtype=str)
    return list(frame.columns), frame.iloc[:, 1:].astype(float).to_numpy()


def read_intervals(path) -> list[tuple[str, str]]:
    """Two date columns per row; a header row is skipped when present."""
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            if len(row) != 2:
                raise IngestError(f"line {i + 1}: expected two dates, got {len(row)} fields")
            if i == 0 and row[0].lower() in ("start", "peak", "from", "begin"):
                continue
            out.append((row[0], row[1]))
    return out


def eigenvalue_draws(store: DrawStore) -> np.ndarray:
    """Companion eigenvalues per retained draw (and state if AR switches).

    Returns rows ``(draw, state, rank, real, imag, modulus)`` with eigenvalues
    ranked by descending modulus within each draw.
    """
    states = range(store.H) if store.config.switch_ar else [0]
    rows = []
    for k in range(store.K):
        for h in states:
            ev = companion_eigenvalues(store.phi[k, h])
            ev = ev[np.lexsort((-ev.imag, -np.abs(ev)))]
            for i, e in enumerate(ev):
                rows.append((k, h, i, e.real, e.imag, abs(e)))
    return np.array(rows, dtype=float).reshape(-1, 6)


def export_plot_data(store: DrawStore, panel: TimePanel, out_dir, recession_dates=None,
                     hpd_level: float = 0.9) -> dict:
    """Write every plot-ready file and return ``name -> path``."""
    os.makedirs(out_dir, exist_ok=True)
    p = store.phi.shape[2]
    files = {}
    files["target"] = write_table(os.path.join(out_dir, "target.csv"), ["date", "y"],
                                  [(d, float(v)) for d, v in zip(panel.time_index, panel.target)])
    probs = smoothed_state_probabilities(store)
    dates = panel.time_index[p:]
    files["state_probabilities"] = write_table(
        os.path.join(out_dir, "state_probabilities.csv"),
        ["date"] + [f"state_{h + 1}" for h in range(store.H)],
        [[d] + [float(x) for x in row] for d, row in zip(dates, probs)])
    if recession_dates:
        files["recessions"] = write_table(os.path.join(out_dir, "recessions.csv"),
                                          ["start", "end"], recession_dates)
    if p:
        ev = eigenvalue_draws(store)
        files["eigenvalues"] = write_table(
            os.path.join(out_dir, "eigenvalues.csv"),
            ["draw", "state", "rank", "real", "imag", "modulus"],
            [(int(r[0]), int(r[1]) + 1, int(r[2]) + 1, r[3], r[4], r[5]) for r in ev])
        med = []
        for h in np.unique(ev[:, 1]):
            for i in range(p):
                sel = ev[(ev[:, 1] == h) & (ev[:, 2] == i)]
                med.append((int(h) + 1, i + 1, float(np.median(sel[:, 3])),
                            float(np.median(sel[:, 4])), float(np.median(sel[:, 5]))))
        files["eigenvalue_medians"] = write_table(
            os.path.join(out_dir, "eigenvalue_medians.csv"),
            ["state", "rank", "real", "imag", "modulus"], med)
    rows = []
    for name, d in parameter_draws(store).items():
        if name.startswith(("gamma_", "beta_")):
            lo, hi = hpd_interval(d, hpd_level)
            rows.append((name, float(np.median(d)), lo, hi))
    files["mnl_coefficients"] = write_table(os.path.join(out_dir, "mnl_coefficients.csv"),
                                            ["parameter", "median", "hpd_lower", "hpd_upper"], rows)
    return files
