"""Ingestion, cleaning, and the four-factor alpha regression."""

import numpy as np
import pytest

from fundselect.errors import DataError, NumericalError
from fundselect.panel import (
    FactorSeries,
    ReturnPanel,
    carhart_fit,
    load_panel,
    month_index,
    month_range,
)

RNG = np.random.default_rng(20260401)


def _write_files(tmp_path, returns_rows, factor_rows):
    returns_csv = tmp_path / "returns.csv"
    factors_csv = tmp_path / "factors.csv"
    returns_csv.write_text("date,fund_id,ret\n" + "".join(r + "\n" for r in returns_rows))
    factors_csv.write_text(
        "date,mkt_rf,smb,hml,mom,rf\n" + "".join(r + "\n" for r in factor_rows)
    )
    return str(returns_csv), str(factors_csv)


def _factor_rows(months):
    rows = []
    for i, m in enumerate(months):
        rows.append(f"{m},{0.01 + 0.001 * i},{0.002},{-0.001},{0.003},{0.0015}")
    return rows


def test_month_range_spans_year_boundary():
    months = month_range("2004-11", "2005-02")
    assert months == ["2004-11", "2004-12", "2005-01", "2005-02"]


def test_month_index_rejects_bad_strings():
    for bad in ("2004-13", "2004-00", "200411", "2004-1", "abcd-ef"):
        with pytest.raises(DataError):
            month_index(bad)


def test_month_range_rejects_reversed_window():
    with pytest.raises(DataError, match="reversed"):
        month_range("2005-02", "2005-01")


def test_load_panel_drops_zero_sentinel_and_incomplete(tmp_path):
    """Fund B reports an exact 0.0 inside the window, fund C misses a month;
    both get dropped and logged, fund A survives."""
    months = month_range("2010-01", "2010-12")
    rows = []
    for m in months:
        rows.append(f"{m},A,0.01")
        ret_b = "0.0" if m == "2010-06" else "0.02"
        rows.append(f"{m},B,{ret_b}")
        if m != "2010-09":
            rows.append(f"{m},C,0.005")
    returns_csv, factors_csv = _write_files(tmp_path, rows, _factor_rows(months))

    log_path = tmp_path / "clean.json"
    panel, factors = load_panel(
        returns_csv, factors_csv, ("2010-01", "2010-12"), cleaning_log_path=str(log_path)
    )
    assert panel.fund_ids == ("A",)
    assert panel.n_months == 12
    assert factors.factors.shape == (12, 4)

    import json

    log = json.loads(log_path.read_text())
    assert log["dropped_zero"] == ["B"]
    assert log["dropped_incomplete"] == ["C"]
    assert log["retained"] == 1


def test_load_panel_requires_twelve_months(tmp_path):
    months = month_range("2010-01", "2010-06")
    rows = [f"{m},A,0.01" for m in months]
    returns_csv, factors_csv = _write_files(tmp_path, rows, _factor_rows(months))
    with pytest.raises(DataError, match="12"):
        load_panel(returns_csv, factors_csv, ("2010-01", "2010-06"))


def test_load_panel_flags_missing_factor_month(tmp_path):
    months = month_range("2010-01", "2010-12")
    rows = [f"{m},A,0.01" for m in months]
    returns_csv, factors_csv = _write_files(tmp_path, rows, _factor_rows(months[:-1]))
    with pytest.raises(DataError, match="2010-12"):
        load_panel(returns_csv, factors_csv, ("2010-01", "2010-12"))


def test_load_panel_no_eligible_funds(tmp_path):
    months = month_range("2010-01", "2010-12")
    rows = [f"{m},A,0.0" for m in months]  # all zero-sentinel
    returns_csv, factors_csv = _write_files(tmp_path, rows, _factor_rows(months))
    with pytest.raises(DataError, match="no eligible funds"):
        load_panel(returns_csv, factors_csv, ("2010-01", "2010-12"))


def test_returns_parser_line_numbers_and_duplicates(tmp_path):
    months = month_range("2010-01", "2010-12")
    rows = [f"{m},A,0.01" for m in months] + ["2010-03,A,0.02"]
    returns_csv, factors_csv = _write_files(tmp_path, rows, _factor_rows(months))
    with pytest.raises(DataError, match=":14"):
        load_panel(returns_csv, factors_csv, ("2010-01", "2010-12"))


def test_returns_parser_rejects_non_numeric(tmp_path):
    months = month_range("2010-01", "2010-12")
    rows = [f"{m},A,0.01" for m in months[:-1]] + [f"{months[-1]},A,oops"]
    returns_csv, factors_csv = _write_files(tmp_path, rows, _factor_rows(months))
    with pytest.raises(DataError, match="oops"):
        load_panel(returns_csv, factors_csv, ("2010-01", "2010-12"))


def _noiseless_panel(T=60, p=5, seed=7):
    """Returns built exactly as alpha + F beta + rf: residuals are zero, so
    the regression must recover alpha and beta to machine precision."""
    rng = np.random.default_rng(seed)
    dates = tuple(month_range("2005-01", "2005-12") + month_range("2006-01", "2009-12"))[:T]
    fac = rng.normal(0.0, 0.04, size=(T, 4))
    rf = np.full(T, 0.002)
    alpha = rng.normal(0.0, 0.003, size=p)
    beta = rng.normal(0.5, 0.3, size=(p, 4))
    returns = alpha[None, :] + fac @ beta.T + rf[:, None]
    panel = ReturnPanel(
        dates=dates, fund_ids=tuple(f"F{i}" for i in range(p)), returns=returns
    )
    factors = FactorSeries(dates=dates, factors=fac, rf=rf)
    return panel, factors, alpha, beta


def test_carhart_noiseless_recovery():
    """With zero residuals the regression is exact; sigma stays positive
    because it is driven by total excess-return dispersion, not residuals."""
    panel, factors, alpha, beta = _noiseless_panel()
    est = carhart_fit(panel, factors)
    assert np.allclose(est.alpha_hat, alpha, atol=1e-12)
    assert np.allclose(est.beta_hat, beta, atol=1e-10)
    assert np.allclose(est.residuals, 0.0, atol=1e-12)
    assert np.all(est.sigma > 0)


def test_carhart_rejects_constant_excess_returns():
    T = 60
    dates = tuple(month_range("2001-01", "2005-12"))
    rng = np.random.default_rng(3)
    fac = rng.normal(0.0, 0.05, size=(T, 4))
    returns = np.column_stack([np.full(T, 0.004), rng.normal(0.0, 0.03, size=T)])
    panel = ReturnPanel(dates=dates, fund_ids=("A", "B"), returns=returns)
    factors = FactorSeries(dates=dates, factors=fac, rf=np.zeros(T))
    with pytest.raises(NumericalError):
        carhart_fit(panel, factors)


def test_carhart_h_vector_reproduces_alpha():
    rng = np.random.default_rng(11)
    T, p = 90, 8
    dates = tuple(month_range("2001-01", "2008-06"))
    fac = rng.normal(0.0, 0.05, size=(T, 4))
    rf = np.full(T, 0.001)
    returns = rng.normal(0.01, 0.05, size=(T, p))
    panel = ReturnPanel(dates=dates, fund_ids=tuple(f"F{i}" for i in range(p)), returns=returns)
    factors = FactorSeries(dates=dates, factors=fac, rf=rf)
    est = carhart_fit(panel, factors)

    # h is the first row of the design pseudo-inverse
    design = np.column_stack([np.ones(T), fac])
    h_direct = np.linalg.pinv(design)[0]
    assert np.allclose(est.h, h_direct, atol=1e-12)
    assert np.allclose(est.h @ est.excess_returns, est.alpha_hat, rtol=1e-10)
    # z * sigma == alpha exactly
    assert np.allclose(est.z * est.sigma, est.alpha_hat, rtol=0, atol=1e-16)


def test_carhart_residuals_orthogonal_to_design():
    rng = np.random.default_rng(4)
    T, p = 72, 6
    dates = tuple(month_range("2001-01", "2006-12"))
    fac = rng.normal(0.0, 0.05, size=(T, 4))
    panel = ReturnPanel(
        dates=dates,
        fund_ids=tuple(f"F{i}" for i in range(p)),
        returns=rng.normal(0.0, 0.04, size=(T, p)),
    )
    factors = FactorSeries(dates=dates, factors=fac, rf=np.full(T, 0.002))
    est = carhart_fit(panel, factors)
    design = np.column_stack([np.ones(T), fac])
    cross = design.T @ est.residuals
    scale = np.linalg.norm(design, axis=0)[:, None] * np.linalg.norm(est.residuals, axis=0)
    assert np.all(np.abs(cross) <= 1e-8 * np.maximum(scale, 1e-30))


def test_carhart_alpha_shift_invariance():
    """Adding a constant c to one fund's returns moves its alpha by exactly c."""
    rng = np.random.default_rng(9)
    T = 60
    dates = tuple(month_range("2001-01", "2005-12"))
    fac = rng.normal(0.0, 0.05, size=(T, 4))
    base = rng.normal(0.0, 0.04, size=(T, 2))
    shifted = base.copy()
    shifted[:, 1] += 0.004
    factors = FactorSeries(dates=dates, factors=fac, rf=np.zeros(T))
    est_a = carhart_fit(
        ReturnPanel(dates=dates, fund_ids=("A", "B"), returns=base), factors
    )
    est_b = carhart_fit(
        ReturnPanel(dates=dates, fund_ids=("A", "B"), returns=shifted), factors
    )
    assert est_b.alpha_hat[1] - est_a.alpha_hat[1] == pytest.approx(0.004, abs=1e-12)
    assert est_b.alpha_hat[0] == pytest.approx(est_a.alpha_hat[0], abs=1e-15)
    # the shift leaves the dispersion, hence sigma, untouched
    assert est_b.sigma[1] == pytest.approx(est_a.sigma[1], rel=1e-12)


def test_carhart_names_rank_deficient_column():
    rng = np.random.default_rng(2)
    T = 60
    dates = tuple(month_range("2001-01", "2005-12"))
    fac = rng.normal(0.0, 0.05, size=(T, 4))
    fac[:, 2] = 2.0 * fac[:, 0]  # hml collinear with mkt_rf
    panel = ReturnPanel(
        dates=dates, fund_ids=("A",), returns=rng.normal(0.0, 0.04, size=(T, 1))
    )
    factors = FactorSeries(dates=dates, factors=fac, rf=np.zeros(T))
    with pytest.raises(NumericalError, match=r"rank deficient.*(mkt_rf|hml)"):
        carhart_fit(panel, factors)
