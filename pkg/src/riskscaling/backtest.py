"""Rolling-window backtest of scaled reserve estimators on return panels.

The protocol: at each step t the desk holds the reserve c * rho_hat_t, where
rho_hat_t is the negated minimum of the last n returns, and compares it with
the realized P&L of the next period (or the sum of the next two, overlapping).
A breach is a step where the secured position X_t + c * rho_hat_t falls to
zero or below. Six scaling methods supply c; they are compared by how close
each portfolio's exception rate lands to the target level.

Breaches here use the weak convention (S_t <= 0). The exception-rate helper
in :mod:`riskscaling.riskmeasures` counts strict losses instead; the two
conventions serve different callers and are intentionally distinct.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from .calibration import (
    DEFAULT_TOL,
    CalibrationProblem,
    build_panel,
    calibrate,
    solve_scalar,
)
from .distributions import Convolution, DistributionSpec, Normal, StudentT
from .errors import (
    DegenerateFitError,
    IngestionError,
    InsufficientSampleError,
    PanelError,
    ParameterError,
    RiskScalingError,
    UnboundedScalarError,
)
from .estimators import WorstCase
from .riskmeasures import VAR, RiskMeasureSpec, normal_risk_ratio, sqrt_time_scalar
from .rng import DEFAULT_SEED, RngStream

# Empirical scalar fitting searches c in [0, _FIT_CAP] only.
_FIT_CAP = 100.0
# fit_empirical_scalar needs at least this many pre-window backtest points.
_MIN_FIT_POINTS = 50
# Degrees-of-freedom clamp for the moment-matched Student-t method.
_NU_FLOOR = 4.5
_NU_CEIL = 100.0
# Stream id for synthetic panel generation (0..2 belong to calibration).
_SYNTH_STREAM = 3
# Monte Carlo panel size for the calibrated backtest methods.
DEFAULT_CAL_M = 100_000


# ---------------------------------------------------------------------------
# horizons


@dataclass(frozen=True)
class OnePeriod:
    """Realized P&L is the single next return."""

    periods: int = field(default=1, init=False)

    def label(self) -> str:
        return "one_period"


@dataclass(frozen=True)
class TwoPeriodOverlap:
    """Realized P&L is the sum of the next two returns, overlapping steps."""

    periods: int = field(default=2, init=False)

    def label(self) -> str:
        return "two_period_overlap"


Horizon = Union[OnePeriod, TwoPeriodOverlap]

_HORIZONS = {"one_period": OnePeriod, "two_period_overlap": TwoPeriodOverlap}


def horizon_from_config(name: str) -> Horizon:
    try:
        return _HORIZONS[name]()
    except KeyError:
        raise ParameterError(
            f"unknown horizon {name!r}; expected one of {sorted(_HORIZONS)}"
        ) from None


# ---------------------------------------------------------------------------
# panels


@dataclass(frozen=True)
class ReturnPanel:
    """Rectangular panel of periodic returns, one row per portfolio.

    ``dropped`` carries human-readable notes about rows the ingestion path
    discarded; it is empty for generated panels.
    """

    ids: tuple[str, ...]
    returns: np.ndarray
    period: str = "weekly"
    dropped: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        arr = np.asarray(self.returns, dtype=float)
        if arr.ndim != 2:
            raise ParameterError(f"returns must be 2-d, got shape {arr.shape}")
        if len(self.ids) != arr.shape[0]:
            raise ParameterError(
                f"{len(self.ids)} ids for {arr.shape[0]} return series"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ParameterError("portfolio ids must be unique")
        if arr.shape[1] < 1:
            raise ParameterError("panel must contain at least one observation")
        if not np.isfinite(arr).all():
            raise ParameterError("panel contains non-finite returns")
        arr.setflags(write=False)
        object.__setattr__(self, "returns", arr)

    @property
    def n_portfolios(self) -> int:
        return self.returns.shape[0]

    @property
    def n_obs(self) -> int:
        return self.returns.shape[1]

    def slice_obs(self, start: int, stop: Optional[int] = None) -> "ReturnPanel":
        """Panel restricted to the observation range [start, stop)."""
        sub = self.returns[:, start:stop]
        return ReturnPanel(self.ids, sub.copy(), self.period, self.dropped)


def make_synthetic_panel(
    law: DistributionSpec,
    portfolios: int,
    obs: int,
    seed: int = DEFAULT_SEED,
    id_prefix: str = "p",
    period: str = "weekly",
) -> ReturnPanel:
    """IID panel with one independent substream per portfolio.

    Row p depends only on (seed, p), never on the portfolio count, so
    growing the panel keeps existing rows bit-identical.
    """
    if portfolios < 1 or obs < 1:
        raise ParameterError("portfolios and obs must be positive")
    root = RngStream(seed, _SYNTH_STREAM)
    rows = np.empty((portfolios, obs), dtype=float)
    width = max(3, len(str(portfolios - 1)))
    ids = tuple(f"{id_prefix}{i:0{width}d}" for i in range(portfolios))
    for p in range(portfolios):
        rows[p] = law.sample(root.child(p), obs)
    return ReturnPanel(ids, rows, period)


# ---------------------------------------------------------------------------
# ingestion


def _parse_numbers(raw: pd.Series, decimal: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(values, blank mask, unparseable mask) for a column of strings."""
    text = raw.astype(str).str.strip()
    if decimal != ".":
        text = text.str.replace(decimal, ".", regex=False)
    blank = (text == "").to_numpy()
    values = pd.to_numeric(text, errors="coerce").to_numpy(dtype=float)
    bad = (~np.isfinite(values)) & ~blank
    return values, blank, bad


def ingest_returns(
    path: str,
    layout: str = "auto",
    delimiter: str = ",",
    decimal: str = ".",
    date_column: str = "date",
    portfolio_column: str = "portfolio",
    return_column: str = "return",
    period: str = "weekly",
) -> ReturnPanel:
    """Load a returns CSV into a validated :class:`ReturnPanel`.

    Wide layout: one date column plus one column per portfolio. Long layout:
    (date, portfolio, return) records. ``layout="auto"`` picks long exactly
    when the three long-layout columns are all present.

    Rows with blank cells are gaps: dropped and reported. Rows that fail to
    parse are tolerated up to 1% of the file, dropped and reported; beyond
    that the file is rejected. Dates must be strictly increasing.
    """
    if layout not in ("auto", "wide", "long"):
        raise ParameterError(f"layout must be auto, wide or long, got {layout!r}")
    try:
        frame = pd.read_csv(
            path, sep=delimiter, dtype=str, keep_default_na=False,
            skipinitialspace=True, encoding="utf-8-sig",
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]

    long_cols = {date_column, portfolio_column, return_column}
    if layout == "auto":
        layout = "long" if long_cols.issubset(frame.columns) else "wide"
    if date_column not in frame.columns:
        raise IngestionError(f"missing date column {date_column!r} in {path}")
    if len(frame) == 0:
        raise IngestionError(f"{path} contains no data rows")

    dates = pd.to_datetime(frame[date_column].str.strip(), errors="coerce")
    bad_date = dates.isna().to_numpy()

    if layout == "long":
        missing = long_cols - set(frame.columns)
        if missing:
            raise IngestionError(f"missing long-layout columns {sorted(missing)} in {path}")
        return _ingest_long(
            frame, dates, bad_date, portfolio_column, return_column, decimal, period, path
        )
    return _ingest_wide(frame, dates, bad_date, date_column, decimal, period, path)


def _reject_if_noisy(bad_rows: int, total: int, path: str) -> None:
    # strict: exactly 1% unparseable is still accepted
    if bad_rows > 0.01 * total:
        raise IngestionError(
            f"{path}: {bad_rows} of {total} rows unparseable, above the 1% threshold"
        )


def _check_monotone(kept_dates: np.ndarray, path: str) -> None:
    if len(kept_dates) >= 2 and not (kept_dates[1:] > kept_dates[:-1]).all():
        raise IngestionError(f"{path}: dates are not strictly increasing")


def _ingest_wide(
    frame: pd.DataFrame,
    dates: pd.Series,
    bad_date: np.ndarray,
    date_column: str,
    decimal: str,
    period: str,
    path: str,
) -> ReturnPanel:
    value_cols = [c for c in frame.columns if c != date_column]
    if not value_cols:
        raise IngestionError(f"{path}: no portfolio columns beside {date_column!r}")
    n_rows = len(frame)
    values = np.empty((n_rows, len(value_cols)), dtype=float)
    blank = np.zeros((n_rows, len(value_cols)), dtype=bool)
    bad = np.zeros((n_rows, len(value_cols)), dtype=bool)
    for j, col in enumerate(value_cols):
        values[:, j], blank[:, j], bad[:, j] = _parse_numbers(frame[col], decimal)

    bad_row = bad_date | bad.any(axis=1)
    gap_row = ~bad_row & blank.any(axis=1)
    _reject_if_noisy(int(bad_row.sum()), n_rows, path)

    dropped = []
    for i in np.flatnonzero(bad_row):
        dropped.append(f"data row {i + 1}: unparseable cell, dropped")
    for i in np.flatnonzero(gap_row):
        when = pd.Timestamp(dates.iloc[i]).date()
        dropped.append(f"data row {i + 1} ({when}): blank return, dropped")

    keep = ~(bad_row | gap_row)
    if not keep.any():
        raise IngestionError(f"{path}: no usable rows after validation")
    _check_monotone(dates.to_numpy()[keep], path)
    panel = values[keep].T
    return ReturnPanel(tuple(value_cols), panel, period, tuple(dropped))


def _ingest_long(
    frame: pd.DataFrame,
    dates: pd.Series,
    bad_date: np.ndarray,
    portfolio_column: str,
    return_column: str,
    decimal: str,
    period: str,
    path: str,
) -> ReturnPanel:
    names = frame[portfolio_column].astype(str).str.strip()
    values, blank, bad_val = _parse_numbers(frame[return_column], decimal)
    bad_rec = bad_date | bad_val | (names == "").to_numpy()
    gap_rec = ~bad_rec & blank
    _reject_if_noisy(int(bad_rec.sum()), len(frame), path)

    dropped = [f"data row {i + 1}: unparseable record, dropped" for i in np.flatnonzero(bad_rec)]
    gap_dates = set()
    for i in np.flatnonzero(gap_rec):
        gap_dates.add(dates.iloc[i])
        dropped.append(f"data row {i + 1}: blank return, dropped")

    keep = ~(bad_rec | gap_rec)
    ids: list[str] = []
    series: dict[str, dict] = {}
    for i in np.flatnonzero(keep):
        name = names.iloc[i]
        if name not in series:
            ids.append(name)
            series[name] = {}
        per = series[name]
        date = dates.iloc[i]
        if date in per:
            raise IngestionError(
                f"{path}: duplicate record for portfolio {name!r} at {date.date()}"
            )
        per[date] = values[i]
    if not ids:
        raise IngestionError(f"{path}: no usable rows after validation")
    for name in ids:
        # file order, which dict insertion preserves
        in_order = list(series[name])
        if any(b <= a for a, b in zip(in_order, in_order[1:])):
            raise IngestionError(
                f"{path}: dates are not strictly increasing for portfolio {name!r}"
            )

    # keep only dates covered by every portfolio; report the holes
    common = set(series[ids[0]])
    all_dates = set(series[ids[0]])
    for name in ids[1:]:
        own = set(series[name])
        common &= own
        all_dates |= own
    for date in sorted((all_dates | gap_dates) - common):
        dropped.append(
            f"date {pd.Timestamp(date).date()}: incomplete across portfolios, dropped"
        )
    ordered = sorted(common)
    if not ordered:
        raise IngestionError(f"{path}: portfolios share no common dates")
    panel = np.array([[series[name][d] for d in ordered] for name in ids], dtype=float)
    return ReturnPanel(tuple(ids), panel, period, tuple(dropped))


# ---------------------------------------------------------------------------
# methods


@dataclass(frozen=True)
class Fixed:
    """Constant scalar, applied as-is."""

    c: float

    def __post_init__(self) -> None:
        if not self.c >= 0:
            raise ParameterError(f"fixed scalar must be nonnegative, got {self.c}")

    def label(self) -> str:
        return f"fixed({self.c:g})"


@dataclass(frozen=True)
class NormalRatioTimesSqrt:
    """Gaussian quantile ratio moving level beta to the target, times sqrt(m).

    beta is the level the unscaled reserve is implicitly estimating; the
    worst of n observations sits near 1/(n+1), so 0.02 suits n = 50.
    """

    beta: float = 0.02

    def __post_init__(self) -> None:
        if not 0 < self.beta < 0.5:
            raise ParameterError(f"beta must lie in (0, 0.5), got {self.beta}")

    def label(self) -> str:
        return f"normal_ratio_sqrt(beta={self.beta:g})"


@dataclass(frozen=True)
class GaussianUnbiasedCalibrated:
    """Monte Carlo scalar calibrated on an IID Gaussian model of the panel."""

    def label(self) -> str:
        return "gaussian_calibrated"


@dataclass(frozen=True)
class StudentTUnbiasedCalibrated:
    """Monte Carlo scalar calibrated on an IID Student-t model, fixed nu."""

    nu: float = 6.0

    def __post_init__(self) -> None:
        if not self.nu > 2:
            raise ParameterError(f"nu must exceed 2, got {self.nu}")

    def label(self) -> str:
        return f"student_t_calibrated(nu={self.nu:g})"


@dataclass(frozen=True)
class EmpiricalParametric:
    """Student-t scalar with nu fitted to pre-window kurtosis, per portfolio."""

    def label(self) -> str:
        return "empirical_parametric"


@dataclass(frozen=True)
class EmpiricalNonParametric:
    """Smallest scalar whose pre-window exception rate meets the target."""

    def label(self) -> str:
        return "empirical_nonparametric"


ScalarSource = Union[
    Fixed,
    NormalRatioTimesSqrt,
    GaussianUnbiasedCalibrated,
    StudentTUnbiasedCalibrated,
    EmpiricalParametric,
    EmpiricalNonParametric,
]

# sources whose scalar depends on the portfolio's own pre-window data
_PER_PORTFOLIO = (EmpiricalParametric, EmpiricalNonParametric)


@dataclass(frozen=True)
class MethodSpec:
    """A numbered scaling method: an id and the rule producing its scalar."""

    id: int
    source: ScalarSource

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ParameterError(f"method id must be >= 1, got {self.id}")

    def label(self) -> str:
        return f"#{self.id} {self.source.label()}"

    @property
    def needs_pre_window(self) -> bool:
        return isinstance(self.source, _PER_PORTFOLIO)


def standard_methods(horizon: Horizon, nu: float = 6.0) -> tuple[MethodSpec, ...]:
    """The six reference methods, ids 1..6.

    #1 square-root-of-time, #2 Gaussian quantile ratio times sqrt(m),
    #3 Gaussian-calibrated, #4 Student-t(nu)-calibrated, #5 Student-t with
    nu fitted per portfolio, #6 empirically fitted scalar.
    """
    return (
        MethodSpec(1, Fixed(sqrt_time_scalar(horizon.periods))),
        MethodSpec(2, NormalRatioTimesSqrt()),
        MethodSpec(3, GaussianUnbiasedCalibrated()),
        MethodSpec(4, StudentTUnbiasedCalibrated(nu)),
        MethodSpec(5, EmpiricalParametric()),
        MethodSpec(6, EmpiricalNonParametric()),
    )


def method_to_config(method: MethodSpec) -> dict:
    src = method.source
    params: dict = {}
    if isinstance(src, Fixed):
        kind, params = "fixed", {"c": src.c}
    elif isinstance(src, NormalRatioTimesSqrt):
        kind, params = "normal_ratio_sqrt", {"beta": src.beta}
    elif isinstance(src, GaussianUnbiasedCalibrated):
        kind = "gaussian_calibrated"
    elif isinstance(src, StudentTUnbiasedCalibrated):
        kind, params = "student_t_calibrated", {"nu": src.nu}
    elif isinstance(src, EmpiricalParametric):
        kind = "empirical_parametric"
    else:
        kind = "empirical_nonparametric"
    return {"id": method.id, "kind": kind, "params": params}


_SOURCE_KINDS = {
    "fixed": Fixed,
    "normal_ratio_sqrt": NormalRatioTimesSqrt,
    "gaussian_calibrated": GaussianUnbiasedCalibrated,
    "student_t_calibrated": StudentTUnbiasedCalibrated,
    "empirical_parametric": EmpiricalParametric,
    "empirical_nonparametric": EmpiricalNonParametric,
}


def method_from_config(data: Mapping) -> MethodSpec:
    extra = set(data) - {"id", "kind", "params"}
    if extra:
        raise ParameterError(f"unknown method keys {sorted(extra)}")
    try:
        kind = data["kind"]
        mid = data["id"]
    except KeyError as exc:
        raise ParameterError(f"method config missing key {exc.args[0]!r}") from None
    if kind not in _SOURCE_KINDS:
        raise ParameterError(f"unknown method kind {kind!r}")
    try:
        source = _SOURCE_KINDS[kind](**dict(data.get("params", {})))
    except TypeError as exc:
        raise ParameterError(f"bad params for method kind {kind!r}: {exc}") from None
    return MethodSpec(int(mid), source)


# ---------------------------------------------------------------------------
# rolling machinery


def _window_series(
    returns: np.ndarray, n: int, horizon: Horizon
) -> tuple[np.ndarray, np.ndarray]:
    """(reserves, realized) for one return series.

    Window t (1-based) covers returns t..n+t-1; its reserve is the negated
    window minimum. Realized P&L is the next return, or the overlapping sum
    of the next two.
    """
    N = returns.shape[0]
    steps = N - n - (1 if isinstance(horizon, TwoPeriodOverlap) else 0)
    if steps < 1:
        raise InsufficientSampleError(
            f"series of {N} observations supports no backtest step at window {n}"
        )
    reserves = -sliding_window_view(returns, n).min(axis=1)[:steps]
    if isinstance(horizon, TwoPeriodOverlap):
        realized = returns[n:-1] + returns[n + 1:]
    else:
        realized = returns[n:]
    return reserves, realized[:steps]


def fit_empirical_scalar(
    pre_returns: np.ndarray, alpha: float, horizon: Horizon, n: int
) -> float:
    """Smallest c in [0, 100] whose pre-window exception rate is <= alpha.

    The rate is a step function of c jumping at the thresholds -X_t /
    rho_hat_t, so the exact minimizer is found by evaluating the rate on
    those thresholds and their upward float neighbours. At a threshold the
    secured position is exactly zero, which still counts as a breach, hence
    the neighbours.
    """
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    pre = np.asarray(pre_returns, dtype=float)
    if pre.ndim != 1:
        raise ParameterError("pre-window returns must be a vector")
    reserves, realized = _window_series(pre, n, horizon)
    if reserves.size < _MIN_FIT_POINTS:
        raise InsufficientSampleError(
            f"pre-window gives {reserves.size} backtest points, need {_MIN_FIT_POINTS}"
        )
    live = reserves != 0
    thresholds = -realized[live] / reserves[live]
    thresholds = thresholds[(thresholds > 0) & (thresholds <= _FIT_CAP)]
    candidates = np.unique(
        np.concatenate(
            [[0.0, _FIT_CAP], thresholds, np.nextafter(thresholds, np.inf)]
        )
    )
    candidates = candidates[candidates <= _FIT_CAP]
    secured = realized[None, :] + candidates[:, None] * reserves[None, :]
    rates = (secured <= 0).mean(axis=1)
    hits = np.flatnonzero(rates <= alpha)
    if hits.size == 0:
        raise UnboundedScalarError(
            f"no scalar up to {_FIT_CAP:g} reaches exception rate {alpha:g}; "
            f"best is {rates.min():.4f}"
        )
    return float(candidates[hits[0]])


def nu_from_kurtosis(pre_returns: np.ndarray) -> float:
    """Student-t degrees of freedom matching the sample excess kurtosis.

    nu = 4 + 6/kurt, clamped to [4.5, 100]. Zero or negative excess
    kurtosis means lighter-than-t tails at any nu, so it maps to the cap.
    """
    pre = np.asarray(pre_returns, dtype=float)
    if pre.size < 4:
        raise InsufficientSampleError("kurtosis fit needs at least 4 observations")
    centered = pre - pre.mean()
    m2 = float(np.mean(centered**2))
    if m2 <= 0:
        raise DegenerateFitError("constant series has no kurtosis")
    kurt = float(np.mean(centered**4) / m2**2 - 3.0)
    if not math.isfinite(kurt) or kurt <= 0:
        return _NU_CEIL
    return float(min(max(4.0 + 6.0 / kurt, _NU_FLOOR), _NU_CEIL))


def _model_problem(law: DistributionSpec, n: int, alpha: float, horizon: Horizon) -> CalibrationProblem:
    target = law if horizon.periods == 1 else Convolution(law, horizon.periods)
    return CalibrationProblem(
        estimation_law=law,
        n=n,
        target_law=target,
        risk=RiskMeasureSpec(VAR, alpha),
        estimator=WorstCase(),
    )


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class BacktestResult:
    """Per-portfolio outcomes of one method on one panel.

    Skipped portfolios (method calibration failed) carry NaN rates and
    scalars; their reserve and realized records are still present since
    those do not depend on the method.
    """

    method: MethodSpec
    portfolio_ids: tuple[str, ...]
    exception_rates: np.ndarray
    breach_counts: np.ndarray
    scalars: np.ndarray
    reserves: np.ndarray
    realized: np.ndarray
    breaches: np.ndarray
    window_count: int
    skipped: tuple[tuple[str, str], ...]
    calibration_record: dict

    @property
    def mean_rate(self) -> float:
        valid = self.exception_rates[~np.isnan(self.exception_rates)]
        return float(valid.mean()) if valid.size else math.nan

    @property
    def sd_rate(self) -> float:
        valid = self.exception_rates[~np.isnan(self.exception_rates)]
        return float(valid.std(ddof=1)) if valid.size >= 2 else math.nan


def rolling_backtest(
    panel: ReturnPanel,
    method: MethodSpec,
    horizon: Horizon,
    n: int = 50,
    alpha: float = 0.01,
    seed: int = DEFAULT_SEED,
    cal_M: int = DEFAULT_CAL_M,
    tol: float = DEFAULT_TOL,
    pre: Optional[ReturnPanel] = None,
    workers: int = 1,
) -> BacktestResult:
    """Run one scaling method through the rolling protocol on every portfolio.

    ``pre`` supplies the held-out earlier segment the per-portfolio methods
    fit on; those fits happen once here and are never revised inside the
    evaluation span. Calibrated fits draw from per-portfolio substreams of
    ``seed``, so results do not depend on ``workers`` or portfolio order.
    """
    if n < 1:
        raise ParameterError(f"window must be positive, got {n}")
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    min_obs = n + horizon.periods - 1 + 1
    if panel.n_obs < min_obs:
        raise ParameterError(
            f"panel has {panel.n_obs} observations, need more than {min_obs - 1} "
            f"for window {n} at horizon {horizon.label()}"
        )
    if method.needs_pre_window:
        if pre is None:
            raise ParameterError(
                f"method {method.label()} fits on pre-window data; none was given"
            )
        if pre.ids != panel.ids:
            raise ParameterError("pre-window panel portfolios do not match the panel")
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")

    P = panel.n_portfolios
    steps = panel.n_obs - n - (1 if isinstance(horizon, TwoPeriodOverlap) else 0)
    reserves = np.empty((P, steps))
    realized = np.empty((P, steps))
    for p in range(P):
        reserves[p], realized[p] = _window_series(panel.returns[p], n, horizon)

    record: dict = {
        "method": method_to_config(method),
        "label": method.label(),
        "horizon": horizon.label(),
        "window": n,
        "target_alpha": alpha,
    }
    scalars = np.full(P, math.nan)
    skipped: list[tuple[str, str]] = []

    src = method.source
    if isinstance(src, Fixed):
        scalars[:] = src.c
    elif isinstance(src, NormalRatioTimesSqrt):
        scalars[:] = normal_risk_ratio(VAR, alpha, src.beta) * sqrt_time_scalar(
            horizon.periods
        )
    elif isinstance(src, (GaussianUnbiasedCalibrated, StudentTUnbiasedCalibrated)):
        law: DistributionSpec = (
            Normal() if isinstance(src, GaussianUnbiasedCalibrated) else StudentT(src.nu)
        )
        shared = calibrate(_model_problem(law, n, alpha, horizon), cal_M, seed, tol)
        scalars[:] = shared.c_star
        record.update(seed=seed, cal_M=cal_M, tol=tol, shared_c=shared.c_star)
    else:
        record.update(seed=seed, cal_M=cal_M, tol=tol)
        assert pre is not None

        def fit_one(p: int) -> tuple[float, Optional[str]]:
            try:
                if isinstance(src, EmpiricalParametric):
                    nu = nu_from_kurtosis(pre.returns[p])
                    model = _model_problem(StudentT(nu), n, alpha, horizon)
                    mc = build_panel(model, cal_M, seed, stream_id=0, path=(method.id, p))
                    return solve_scalar(mc, model.risk, tol).c_star, None
                return fit_empirical_scalar(pre.returns[p], alpha, horizon, n), None
            except RiskScalingError as exc:
                return math.nan, f"{type(exc).__name__}: {exc}"

        if workers == 1:
            outcomes = [fit_one(p) for p in range(P)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(fit_one, range(P)))
        for p, (value, failure) in enumerate(outcomes):
            scalars[p] = value
            if failure is not None:
                skipped.append((panel.ids[p], failure))
        if isinstance(src, EmpiricalParametric):
            record["nu_hats"] = [
                None if math.isnan(s) else round(nu_from_kurtosis(pre.returns[p]), 6)
                for p, s in enumerate(scalars)
            ]

    if np.isnan(scalars).all():
        first = skipped[0][1] if skipped else "no portfolios"
        raise PanelError(f"every portfolio failed method calibration; first: {first}")

    secured = realized + scalars[:, None] * reserves
    breaches = secured <= 0
    breaches[np.isnan(scalars)] = False
    counts = breaches.sum(axis=1)
    rates = counts / steps
    rates = np.where(np.isnan(scalars), math.nan, rates)

    return BacktestResult(
        method=method,
        portfolio_ids=panel.ids,
        exception_rates=rates,
        breach_counts=counts.astype(int),
        scalars=scalars,
        reserves=reserves,
        realized=realized,
        breaches=breaches,
        window_count=steps,
        skipped=tuple(skipped),
        calibration_record=record,
    )


# ---------------------------------------------------------------------------
# aggregation and reporting


@dataclass(frozen=True)
class MethodSummary:
    method_id: int
    label: str
    mean_rate: float
    sd_rate: float
    best_share: float


@dataclass(frozen=True)
class AggregateSummary:
    """Cross-method comparison: mean/sd of rates plus the winner share."""

    target: float
    portfolio_count: int
    rows: tuple[MethodSummary, ...]


def aggregate_methods(
    results: Sequence[BacktestResult], target: float = 0.01
) -> AggregateSummary:
    """Mean and sd of exception rates per method, plus each method's share
    of portfolios where it lands closest to the target. Ties go to the
    lower method id. Portfolios skipped by every method do not count."""
    if not results:
        raise ParameterError("no results to aggregate")
    ids = results[0].portfolio_ids
    for r in results[1:]:
        if r.portfolio_ids != ids:
            raise ParameterError("results cover different portfolio sets")
    seen = [r.method.id for r in results]
    if len(set(seen)) != len(seen):
        raise ParameterError("method ids must be unique within one aggregation")

    P = len(ids)
    wins = {r.method.id: 0 for r in results}
    scored = 0
    for p in range(P):
        best: Optional[tuple[float, int]] = None
        for r in results:
            rate = r.exception_rates[p]
            if math.isnan(rate):
                continue
            key = (abs(rate - target), r.method.id)
            if best is None or key < best:
                best = key
        if best is not None:
            scored += 1
            wins[best[1]] += 1

    rows = tuple(
        MethodSummary(
            method_id=r.method.id,
            label=r.method.label(),
            mean_rate=r.mean_rate,
            sd_rate=r.sd_rate,
            best_share=wins[r.method.id] / scored if scored else math.nan,
        )
        for r in results
    )
    return AggregateSummary(target=target, portfolio_count=P, rows=rows)


@dataclass(frozen=True)
class DensityBlock:
    method_id: int
    label: str
    bin_edges: np.ndarray
    counts: np.ndarray
    kde_x: np.ndarray
    kde_y: np.ndarray


@dataclass(frozen=True)
class DensityReport:
    bin_width: float
    blocks: tuple[DensityBlock, ...]

    def to_rows(self) -> list[dict]:
        """Long-format rows for CSV emission: histogram bins then kde samples."""
        rows = []
        for block in self.blocks:
            for k in range(block.counts.size):
                left = block.bin_edges[k]
                right = block.bin_edges[k + 1]
                rows.append(
                    {
                        "method_id": block.method_id,
                        "label": block.label,
                        "kind": "hist",
                        "x": float((left + right) / 2),
                        "x_left": float(left),
                        "x_right": float(right),
                        "value": int(block.counts[k]),
                    }
                )
            for x, y in zip(block.kde_x, block.kde_y):
                rows.append(
                    {
                        "method_id": block.method_id,
                        "label": block.label,
                        "kind": "kde",
                        "x": float(x),
                        "x_left": math.nan,
                        "x_right": math.nan,
                        "value": float(y),
                    }
                )
        return rows


def density_report(
    results: Sequence[BacktestResult], bin_width: float = 0.001
) -> DensityReport:
    """Histogram (0.1pp bins by default) and kernel density of the
    per-portfolio exception rates, one block per method. Degenerate rate
    vectors (fewer than two distinct values) get an empty kde block."""
    if not bin_width > 0:
        raise ParameterError(f"bin width must be positive, got {bin_width}")
    blocks = []
    for r in results:
        valid = r.exception_rates[~np.isnan(r.exception_rates)]
        top = float(valid.max()) if valid.size else 0.0
        n_bins = max(1, math.ceil((top + 1e-12) / bin_width))
        edges = np.arange(n_bins + 1) * bin_width
        counts, _ = np.histogram(valid, bins=edges)
        if valid.size >= 2 and valid.std() > 0:
            kde = stats.gaussian_kde(valid)
            xs = np.linspace(0.0, top + 5 * bin_width, 200)
            ys = kde(xs)
        else:
            xs = np.empty(0)
            ys = np.empty(0)
        blocks.append(
            DensityBlock(
                method_id=r.method.id,
                label=r.method.label(),
                bin_edges=edges,
                counts=counts,
                kde_x=xs,
                kde_y=ys,
            )
        )
    return DensityReport(bin_width=bin_width, blocks=tuple(blocks))
