"""Monthly return-panel ingestion and four-factor alpha estimation.

Input files are plain CSV. Fund returns arrive long form (``date,fund_id,ret``,
dates as YYYY-MM); factors arrive wide form (``date,mkt_rf,smb,hml,mom,rf``).
Cleaning keeps only funds with a complete record over the requested window and
drops any fund that reports a return of exactly 0.0 inside it (the usual
missing-value sentinel in survivor databases).

Alphas come from the time-series regression of each fund's excess return on
[1, mkt_rf, smb, hml, mom]. The intercept estimate is a fixed linear functional
of the fund's excess returns, ``alpha_i = h @ y_i``, and the vector ``h`` is
shared by all funds; everything downstream (standard errors, the cross-fund
covariance of the alpha estimates) is built from that single vector.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError

FACTOR_COLUMNS = ("mkt_rf", "smb", "hml", "mom")
_DATE_RE = re.compile(r"^(\d{4})-(\d{2})$")


def month_index(date: str) -> int:
    """Map 'YYYY-MM' to a single integer month count (gap checks, ranges)."""
    m = _DATE_RE.match(date)
    if m is None:
        raise DataError(f"bad date {date!r}: expected YYYY-MM")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise DataError(f"bad date {date!r}: month out of range")
    return year * 12 + (month - 1)


def month_range(start: str, end: str) -> list[str]:
    """All months from start to end inclusive, as YYYY-MM strings."""
    lo, hi = month_index(start), month_index(end)
    if hi < lo:
        raise DataError(f"window {start}..{end} is reversed")
    return [f"{i // 12:04d}-{i % 12 + 1:02d}" for i in range(lo, hi + 1)]


@dataclass(eq=False)
class ReturnPanel:
    """Aligned monthly net returns: a T x p matrix plus its date/fund labels."""

    dates: tuple[str, ...]
    fund_ids: tuple[str, ...]
    returns: np.ndarray  # T x p

    @property
    def n_months(self) -> int:
        return len(self.dates)

    @property
    def n_funds(self) -> int:
        return len(self.fund_ids)


@dataclass(eq=False)
class FactorSeries:
    """Monthly factor returns and the risk-free rate on the same date grid."""

    dates: tuple[str, ...]
    factors: np.ndarray  # T x 4, columns FACTOR_COLUMNS
    rf: np.ndarray  # T


@dataclass(eq=False)
class AlphaEstimates:
    """Per-fund regression output plus the shared intercept extractor h.

    ``alpha_hat[i] == h @ excess_returns[:, i]`` and ``z = alpha_hat / sigma``
    hold by construction. ``sigma`` is the alpha standard error implied by the
    fund's total excess-return variance (i.i.d.-in-time convention).
    """

    fund_ids: tuple[str, ...]
    alpha_hat: np.ndarray  # p
    beta_hat: np.ndarray  # p x 4
    sigma: np.ndarray  # p
    z: np.ndarray  # p
    residuals: np.ndarray  # T x p
    h: np.ndarray  # T
    excess_returns: np.ndarray  # T x p


def _parse_returns_csv(path: str) -> dict[str, dict[str, float]]:
    """Read the long-form returns file into {fund_id: {date: ret}}."""
    by_fund: dict[str, dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != ["date", "fund_id", "ret"]:
            raise DataError(f"{path}: expected header 'date,fund_id,ret'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            date, fund, ret_s = row[0].strip(), row[1].strip(), row[2].strip()
            month_index(date)  # validates format
            if not fund:
                raise DataError(f"{path}:{lineno}: empty fund_id")
            try:
                ret = float(ret_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad return value {ret_s!r}") from None
            if not np.isfinite(ret):
                raise DataError(f"{path}:{lineno}: non-finite return")
            fund_rows = by_fund.setdefault(fund, {})
            if date in fund_rows:
                raise DataError(f"{path}:{lineno}: duplicate row for fund {fund} at {date}")
            fund_rows[date] = ret
    return by_fund


def _parse_factors_csv(path: str) -> dict[str, tuple[np.ndarray, float]]:
    """Read the factor file into {date: (factor row, rf)}."""
    expected = ["date", *FACTOR_COLUMNS, "rf"]
    out: dict[str, tuple[np.ndarray, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[: len(expected)]] != expected:
            raise DataError(f"{path}: expected header '{','.join(expected)}'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            date = row[0].strip()
            month_index(date)
            if date in out:
                raise DataError(f"{path}:{lineno}: duplicate factor row for {date}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad factor value") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite factor value")
            out[date] = (np.asarray(vals[:4], dtype=float), vals[4])
    return out


def assemble_window(
    by_fund: dict[str, dict[str, float]],
    by_date: dict[str, tuple[np.ndarray, float]],
    window: tuple[str, str],
) -> tuple[ReturnPanel, FactorSeries, dict]:
    """Clean and align already-parsed data over `window`; returns the cleaning
    log as the third element."""
    months = month_range(window[0], window[1])
    if len(months) < 12:
        raise DataError(f"window {window[0]}..{window[1]} spans {len(months)} months; need >= 12")

    missing_factor_months = [m for m in months if m not in by_date]
    if missing_factor_months:
        raise DataError(
            "factor series does not cover the window; "
            f"first missing month {missing_factor_months[0]}"
        )

    dropped_zero: list[str] = []
    dropped_incomplete: list[str] = []
    kept: list[str] = []
    columns: list[np.ndarray] = []
    for fund in sorted(by_fund):
        rows = by_fund[fund]
        vals = [rows.get(m) for m in months]
        if any(v is None for v in vals):
            dropped_incomplete.append(fund)
            continue
        col = np.asarray(vals, dtype=float)
        if np.any(col == 0.0):
            dropped_zero.append(fund)
            continue
        kept.append(fund)
        columns.append(col)

    log = {
        "dropped_zero": dropped_zero,
        "dropped_incomplete": dropped_incomplete,
        "retained": len(kept),
    }
    if not kept:
        raise DataError(
            f"no eligible funds in {window[0]}..{window[1]} "
            f"(dropped {len(dropped_zero)} zero-sentinel, {len(dropped_incomplete)} incomplete)"
        )

    panel = ReturnPanel(
        dates=tuple(months),
        fund_ids=tuple(kept),
        returns=np.column_stack(columns),
    )
    factors = FactorSeries(
        dates=tuple(months),
        factors=np.vstack([by_date[m][0] for m in months]),
        rf=np.asarray([by_date[m][1] for m in months], dtype=float),
    )
    return panel, factors, log


def load_panel(
    returns_csv: str,
    factors_csv: str,
    window: tuple[str, str],
    *,
    cleaning_log_path: str | None = None,
) -> tuple[ReturnPanel, FactorSeries]:
    """Load, clean, and align the two input files over `window` (inclusive).

    Funds must have a row for every month of the window and no return equal to
    exactly 0.0 inside it; everything else is dropped and recorded in the
    cleaning log (written as JSON when `cleaning_log_path` is given).
    """
    by_fund = _parse_returns_csv(returns_csv)
    by_date = _parse_factors_csv(factors_csv)
    panel, factors, log = assemble_window(by_fund, by_date, window)

    if cleaning_log_path is not None:
        with open(cleaning_log_path, "w") as fh:
            json.dump(log, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return panel, factors


def _check_design_rank(design: np.ndarray) -> None:
    """Raise naming the redundant column if the regression design is singular."""
    names = ("const",) + FACTOR_COLUMNS
    # Scale columns first so the singular-value test is unit-free.
    norms = np.linalg.norm(design, axis=0)
    dead = np.nonzero(norms == 0.0)[0]
    if dead.size:
        raise NumericalError(
            f"regression design is rank deficient: column {names[dead[0]]!r} is zero"
        )
    scaled = design / norms
    svals = np.linalg.svd(scaled, compute_uv=False)
    if svals[-1] > 1e-10 * svals[0]:
        return
    _, _, vt = np.linalg.svd(scaled)
    offender = int(np.argmax(np.abs(vt[-1])))
    raise NumericalError(
        f"regression design is rank deficient: column {names[offender]!r} is redundant"
    )


def carhart_fit(panel: ReturnPanel, factors: FactorSeries) -> AlphaEstimates:
    """Regress each fund's excess return on the four factors plus a constant.

    Returns estimates for every fund, the shared intercept-extractor vector h,
    and alpha standard errors computed from the total variance of the fund's
    excess returns (same convention used to assemble the cross-fund covariance
    of the alpha estimates downstream).
    """
    if panel.dates != factors.dates:
        raise DataError("panel and factor dates are not aligned")
    T, p = panel.returns.shape
    if T <= 6:
        raise DataError(f"window of {T} months cannot identify 5 coefficients")

    excess = panel.returns - factors.rf[:, None]
    design = np.column_stack([np.ones(T), factors.factors])
    _check_design_rank(design)

    # One solve gives the whole coefficient extractor; its first row is h.
    gram = design.T @ design
    extractor = np.linalg.solve(gram, design.T)  # 5 x T
    h = extractor[0]
    coefs = extractor @ excess  # 5 x p
    alpha = coefs[0]
    betas = coefs[1:].T  # p x 4
    residuals = excess - design @ coefs

    h_norm = float(np.linalg.norm(h))
    sigma = h_norm * np.std(excess, axis=0, ddof=1)
    degenerate = sigma <= 1e-15 * (1.0 + np.abs(alpha))
    if np.any(degenerate):
        bad = int(np.argmax(degenerate))
        raise NumericalError(
            f"fund {panel.fund_ids[bad]!r} has constant excess returns; alpha s.e. is zero"
        )
    z = alpha / sigma

    return AlphaEstimates(
        fund_ids=panel.fund_ids,
        alpha_hat=alpha,
        beta_hat=betas,
        sigma=sigma,
        z=z,
        residuals=residuals,
        h=h,
        excess_returns=excess,
    )
