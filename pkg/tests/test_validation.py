import pytest

from kramers_exit.validation import Measurement, ValidationRow, run_validation


def test_interval_rows_approach_one(interval):
    res = run_validation(interval, [0.2, 0.1, 0.05], grid=2048)
    ratios = [r.pde_ratio for r in sorted(res.rows, key=lambda r: r.h)]
    assert ratios[0] < ratios[1] < ratios[2]
    assert res.trend_toward_one and res.passed
    assert res.to_json()["rows"][0]["h"] == 0.2


def test_mc_column_and_consistency(disc_plus):
    res = run_validation(disc_plus, [1.0], grid=64, mc_n=400, mc_dt=1e-3)
    row = res.rows[0]
    assert row.mc.status == "ok" and row.mc.stderr > 0
    assert row.mc_ratio == pytest.approx(row.mc.value / row.predicted)
    assert isinstance(row.mc_consistent, bool)
    assert len(row.csv_row()) == len(ValidationRow.CSV_HEADER)


def test_failed_cells_do_not_abort(disc_plus):
    res = run_validation(disc_plus, [0.5], grid=8, mc_n=10, max_steps=1)
    row = res.rows[0]
    assert row.pde.status.startswith("error")
    assert row.mc.status.startswith("error")
    assert row.pde_ratio is None and row.mc_ratio is None


def test_empty_temperature_list(disc_plus):
    with pytest.raises(ValueError):
        run_validation(disc_plus, [])


def test_measurement_defaults():
    m = Measurement(1.0, None, "ok")
    assert m.value == 1.0
