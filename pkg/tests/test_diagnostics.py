import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fbtt.config import StatWindows, derive_scales
from fbtt.diagnostics import (CSV_COLUMNS, CsvSink, DiagnosticsRecord, StatSummary,
                              comparison_table, compute_E_add, export_fields, field_intensity,
                              field_unit, load_array, onset_time, read_csv,
                              relative_error_percent, save_array, summarize, summarize_trace,
                              tt_cell_count, write_csv)

# mean |grad| of sin(2 pi i / 16) (and of sin(2 pi (i + 2 j) / 16)) on a 16x16 grid with
# h = 0.5, by explicit double loops over central differences
E_SINE_X = 0.4809698831278216
E_SINE_DIAG = 1.010519162366553


def sine(n, kx, ky):
    i = np.arange(n)
    return np.sin(2 * np.pi * (kx * i[:, None] + ky * i[None, :]) / n)


def rec(step, t, e, r=(3, 2)):
    return DiagnosticsRecord(step, t, e, 1e10, r[0], r[1], tt_cell_count(16, 15, *r), 0.1 * step, 1e-4)


def test_E_add_cases():
    assert compute_E_add(np.zeros((8, 8)), 0.5) == 0.0
    assert compute_E_add(sine(16, 1, 0), 0.5) == pytest.approx(E_SINE_X, rel=1e-14)
    assert compute_E_add(sine(16, 1, 2), 0.5) == pytest.approx(E_SINE_DIAG, rel=1e-14)
    assert compute_E_add(-3 * sine(16, 1, 2), 0.5, 2.0) == pytest.approx(6 * E_SINE_DIAG, rel=1e-14)


def test_field_unit(ref_cfg):
    p = ref_cfg.physics
    s = derive_scales(p)
    assert field_unit(p, s) == pytest.approx(p.T_i / (s.l * p.e_charge), rel=1e-15)


def test_cell_count():
    assert tt_cell_count(250, 31, 55, 40) == 250 ** 2 * 55 + 55 * 31 * 40 + 40 * 31


def test_summary_of_constant_trace():
    t = np.linspace(0, 0.05, 101)
    s = summarize_trace(t, np.full_like(t, 0.7))
    assert s.time_avg == pytest.approx(0.7, rel=1e-14)
    assert s.peak == 0.7 and s.onset is None


def test_onset_at_constructed_peak():
    t = np.linspace(0, 0.05, 501)
    peak = 0.0173
    E = 1 - np.abs(t - peak) / peak
    # an early wiggle before the onset window must be ignored
    E = E + np.where(t < 0.004, 0.05 * np.sin(2 * np.pi * t / 0.001), 0.0)
    s = summarize_trace(t, E)
    assert s.onset == pytest.approx(peak, abs=0.5 * (t[1] - t[0]))
    assert s.peak == pytest.approx(E[(t >= 0.015) & (t <= 0.03)].max())


def test_trapezoid_average_of_ramp():
    t = np.linspace(0, 0.05, 201)
    s = summarize_trace(t, t)
    assert s.time_avg == pytest.approx(0.04, rel=1e-12)


def test_window_outside_data():
    t = np.linspace(0, 0.02, 50)
    with pytest.raises(ValueError, match="window"):
        summarize_trace(t, np.ones_like(t))
    with pytest.raises(ValueError):
        summarize([], StatWindows())


def test_table_reproduces_reference_errors():
    full = StatSummary(8.3083e-02, 1.3903e-01, 1.7267e-02)
    tt = StatSummary(8.0523e-02, 1.3200e-01, 1.5989e-02)
    assert relative_error_percent(full.time_avg, tt.time_avg) == pytest.approx(3.08, abs=0.005)
    assert relative_error_percent(full.peak, tt.peak) == pytest.approx(5.05, abs=0.01)
    assert relative_error_percent(full.onset, tt.onset) == pytest.approx(7.40, abs=0.005)
    table = comparison_table(full, tt)
    lines = table.splitlines()
    assert len(lines) == 4
    assert "Full" in lines[0] and "TT" in lines[0]
    assert "8.3083e-02" in lines[1] and "3.08" in lines[1]
    assert "n/a" in comparison_table(full, StatSummary(1.0, 1.0, None))


def test_csv_header_only(tmp_path):
    write_csv([], tmp_path / "a.csv", "abc123")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines == ["# config_hash: abc123", ",".join(CSV_COLUMNS)]
    assert read_csv(tmp_path / "a.csv") == ([], "abc123")


def test_csv_roundtrip_and_sink(tmp_path):
    recs = [rec(i, i * 1e-4, 0.01 * i) for i in range(5)]
    recs.append(DiagnosticsRecord(5, 5e-4, 0.2, 1e10, None, None, 57600, 0.5, 1e-10))
    sink = CsvSink(tmp_path / "b.csv", "h", keep=recs[:2])
    for r in recs[2:]:
        sink(r)
    sink.close()
    back, h = read_csv(tmp_path / "b.csv")
    assert h == "h" and back == recs


def test_csv_rejects_foreign_file(tmp_path):
    (tmp_path / "c.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "c.csv")


@given(st.lists(st.integers(0, 200), min_size=0, max_size=30))
def test_summary_ignores_duplicates(dups):
    t = np.linspace(0, 0.05, 201)
    E = 0.1 + 0.05 * np.sin(300 * t)
    recs = [rec(i, t[i], E[i]) for i in range(len(t))]
    noisy = sorted(recs + [recs[i] for i in dups], key=lambda r: r.step)
    assert summarize(noisy) == summarize(recs)


def test_summary_survives_csv(tmp_path):
    t = np.linspace(0, 0.05, 101)
    recs = [rec(i, t[i], 0.1 + t[i] * np.cos(200 * t[i])) for i in range(len(t))]
    write_csv(recs, tmp_path / "d.csv", "h")
    back, _ = read_csv(tmp_path / "d.csv")
    assert summarize(back) == summarize(recs)


def test_onset_requires_two_samples():
    assert onset_time(np.array([0.0]), np.array([1.0]), 0.0) is None


def test_array_roundtrip(tmp_path, rng):
    a = rng.standard_normal((5, 6))
    save_array(a, tmp_path / "a.bin", "hh", "[ix, iy]")
    b, meta = load_array(tmp_path / "a.bin")
    np.testing.assert_array_equal(a, b)
    assert meta == {"shape": [5, 6], "dtype": "<f8", "order": "C", "index_order": "[ix, iy]",
                    "config_hash": "hh"}
    assert (tmp_path / "a.bin").stat().st_size == 5 * 6 * 8


def test_array_size_mismatch(tmp_path):
    save_array(np.zeros(4), tmp_path / "z.bin", "h", "[i]")
    (tmp_path / "z.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError):
        load_array(tmp_path / "z.bin")


def test_field_export(tmp_path):
    n, h = 16, 0.5
    phi = np.cos(2 * np.pi * 3 * np.arange(n) / n)[:, None] * np.ones((1, n))
    n_e = 1 + phi
    export_fields(tmp_path, n_e, phi, h, "cafe")
    for name in ("n_e", "phi", "E_spectrum"):
        arr, meta = load_array(tmp_path / f"{name}.bin")
        assert meta["config_hash"] == "cafe"
    back, _ = load_array(tmp_path / "n_e.bin")
    np.testing.assert_array_equal(back, n_e)
    spec, _ = load_array(tmp_path / "E_spectrum.bin")
    np.testing.assert_array_equal(spec, field_intensity(phi, h))
    hot = {tuple(i) for i in np.argwhere(spec > 1e-9 * spec.max())}
    assert hot == {(3, 0), (n - 3, 0)}
    json.loads((tmp_path / "phi.bin.json").read_text())
