"""
Observables and their persistence.

Time series go to CSV with the columns in ``CSV_COLUMNS``; the first line
is a ``# config_hash: <hash>`` comment.  2D and 4D arrays are stored as raw
little-endian float64 in C order next to a JSON sidecar with shape, dtype,
index order and the config hash.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import uniform_filter1d

from .config import DerivedScales, PhysicalParams, StatWindows
from .fields import gradient, spectral_intensity

CSV_COLUMNS = ("step", "t_phys_s", "E_add_V_per_m", "mean_ni", "rank1", "rank2",
               "tt_cells", "cpu_s", "eps")


@dataclass
class DiagnosticsRecord:
    step: int
    t_phys_s: float
    E_add_V_per_m: float
    mean_ni: float
    rank1: Optional[int]
    rank2: Optional[int]
    tt_cells: int
    cpu_s: float
    eps: float


@dataclass
class StatSummary:
    time_avg: float
    peak: float
    onset: Optional[float]

    def as_tuple(self):
        return self.time_avg, self.peak, self.onset


def field_unit(p: PhysicalParams, s: DerivedScales) -> float:
    """Volts per metre carried by a unit dimensionless potential gradient."""
    return p.T_i / (s.l * p.e_charge)


def compute_E_add(phi: np.ndarray, h: float, unit: float = 1.0) -> float:
    """Grid mean of ``|grad phi|`` (central differences), times ``unit``."""
    gx, gy = gradient(phi, h)
    return unit * float(np.mean(np.sqrt(gx ** 2 + gy ** 2)))


def field_intensity(phi: np.ndarray, h: float) -> np.ndarray:
    """Spectral intensity of the field ``E = -grad phi``."""
    gx, gy = gradient(phi, h)
    return spectral_intensity(-gx, -gy)


def tt_cell_count(n_x: int, n_v: int, r1: int, r2: int) -> int:
    return n_x * n_x * r1 + r1 * n_v * r2 + r2 * n_v


# ----------------------------------------------------------------------------
# statistics


def _dedupe(records: Sequence[DiagnosticsRecord]) -> list:
    seen, out = set(), []
    for r in records:
        if r.step not in seen:
            seen.add(r.step)
            out.append(r)
    return out


def _window(t, lo, hi, what):
    tol = 1e-9 * max(abs(hi), 1e-300)
    if len(t) == 0 or lo < t[0] - tol or hi > t[-1] + tol or hi <= lo:
        rng = "empty" if len(t) == 0 else f"[{t[0]:.6g}, {t[-1]:.6g}]"
        raise ValueError(f"{what} window [{lo:g}, {hi:g}] s is outside the data {rng} s")
    mask = (t >= lo - tol) & (t <= hi + tol)
    if mask.sum() < 2:
        raise ValueError(f"{what} window [{lo:g}, {hi:g}] s holds fewer than two samples")
    return mask


def onset_time(t: np.ndarray, E: np.ndarray, after: float, smoothing: int = 5) -> Optional[float]:
    """First sample time past ``after`` where the smoothed trace starts to fall."""
    if len(E) < 2:
        return None
    smooth = uniform_filter1d(np.asarray(E, dtype=float), size=max(1, smoothing), mode="nearest")
    d = np.diff(smooth)
    idx = np.nonzero((t[:-1] > after) & (d < 0))[0]
    return float(t[idx[0]]) if idx.size else None


def summarize_trace(t, E, windows: StatWindows = StatWindows()) -> StatSummary:
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("records must be strictly time-ordered")
    m = _window(t, *windows.avg, "average")
    tw = t[m]
    avg = float(trapezoid(E[m], tw) / (tw[-1] - tw[0]))
    m = _window(t, *windows.peak, "maximum")
    peak = float(np.max(E[m]))
    return StatSummary(avg, peak, onset_time(t, E, windows.onset_after, windows.smoothing))


def summarize(records: Sequence[DiagnosticsRecord], windows: StatWindows = StatWindows()) -> StatSummary:
    recs = _dedupe(records)
    return summarize_trace([r.t_phys_s for r in recs], [r.E_add_V_per_m for r in recs], windows)


def relative_error_percent(ref: Optional[float], other: Optional[float]) -> Optional[float]:
    if ref is None or other is None or ref == 0:
        return None
    return 100.0 * abs(other - ref) / abs(ref)


def comparison_table(full: StatSummary, tt: StatSummary) -> str:
    """Side-by-side statistics, one row per quantity."""
    rows = [("Time-averaged E_add, V/m", full.time_avg, tt.time_avg),
            ("Max E_add, V/m", full.peak, tt.peak),
            ("Saturation onset, s", full.onset, tt.onset)]

    def fmt(x):
        return "n/a" if x is None else f"{x:.4e}"

    lines = [f"{'':28s} {'Full':>12s} {'TT':>12s} {'Error, %':>9s}"]
    for name, a, b in rows:
        err = relative_error_percent(a, b)
        lines.append(f"{name:28s} {fmt(a):>12s} {fmt(b):>12s} "
                     f"{'n/a' if err is None else f'{err:.2f}':>9s}")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# CSV time series


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def write_csv(records: Sequence[DiagnosticsRecord], path, config_hash: str) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


class CsvSink:
    """Appends records to a CSV as they arrive; flushed on request."""

    def __init__(self, path, config_hash: str, keep: Sequence[DiagnosticsRecord] = ()):
        self.path = Path(path)
        write_csv(keep, self.path, config_hash)
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh)

    def __call__(self, rec: DiagnosticsRecord) -> None:
        self._writer.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_csv(path) -> tuple:
    """Return ``(records, config_hash)``."""
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# config_hash:"):
            raise ValueError(f"{path}: missing config hash line")
        chash = first.split(":", 1)[1].strip()
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        recs = []
        for row in reader:
            vals = {}
            for c, s in zip(CSV_COLUMNS, row):
                if s == "":
                    vals[c] = None
                elif c in ("step", "rank1", "rank2", "tt_cells"):
                    vals[c] = int(s)
                else:
                    vals[c] = float(s)
            recs.append(DiagnosticsRecord(**vals))
    return recs, chash


# ----------------------------------------------------------------------------
# raw arrays with JSON sidecars


def save_array(arr: np.ndarray, path, config_hash: str, index_order: str) -> None:
    """Write ``path`` (raw float64) and ``path.json``."""
    path = Path(path)
    a = np.ascontiguousarray(arr, dtype="<f8")
    path.write_bytes(a.tobytes())
    meta = {"shape": list(a.shape), "dtype": "<f8", "order": "C",
            "index_order": index_order, "config_hash": config_hash}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1) + "\n")


def load_array(path) -> tuple:
    """Return ``(array, sidecar dict)``."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype=meta["dtype"])
    expected = math.prod(meta["shape"])
    if data.size != expected:
        raise ValueError(f"{path}: holds {data.size} values, sidecar says {expected}")
    return data.reshape(meta["shape"]).astype(float), meta


def export_fields(directory, n_e: np.ndarray, phi: np.ndarray, h: float, config_hash: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(n_e, d / "n_e.bin", config_hash, "[ix, iy]")
    save_array(phi, d / "phi.bin", config_hash, "[ix, iy]")
    save_array(field_intensity(phi, h), d / "E_spectrum.bin", config_hash, "[kx, ky] fft bins")


def record_dict(r: DiagnosticsRecord) -> dict:
    return asdict(r)
