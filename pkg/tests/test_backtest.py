"""Returns ingestion, scaling-method fits, and the rolling backtest."""
import math

import numpy as np
import pytest

from riskscaling import (
    EmpiricalNonParametric,
    EmpiricalParametric,
    Fixed,
    GaussianUnbiasedCalibrated,
    IngestionError,
    InsufficientSampleError,
    MethodSpec,
    Normal,
    NormalRatioTimesSqrt,
    OnePeriod,
    ParameterError,
    RngStream,
    StudentT,
    StudentTUnbiasedCalibrated,
    TwoPeriodOverlap,
    UnboundedScalarError,
    aggregate_methods,
    density_report,
    fit_empirical_scalar,
    horizon_from_config,
    ingest_returns,
    make_synthetic_panel,
    method_from_config,
    method_to_config,
    nu_from_kurtosis,
    rolling_backtest,
    standard_methods,
)
from riskscaling.backtest import ReturnPanel, _window_series
from riskscaling.errors import DegenerateFitError

ONE = OnePeriod()
TWO = TwoPeriodOverlap()


# ---------------------------------------------------------------------------
# horizons and window series


def test_horizon_labels_and_config():
    assert ONE.periods == 1 and TWO.periods == 2
    assert horizon_from_config("one_period") == ONE
    assert horizon_from_config("two_period_overlap") == TWO
    with pytest.raises(ParameterError):
        horizon_from_config("three_period")


def test_window_series_one_period():
    r = np.arange(1.0, 11.0)  # 10 obs
    reserves, realized = _window_series(r, n=4, horizon=ONE)
    assert reserves.shape == realized.shape == (6,)
    # reserve_t = -min of the window; first window [1,2,3,4]
    assert reserves[0] == -1.0
    np.testing.assert_allclose(realized, r[4:])


def test_window_series_two_period_overlap():
    r = np.arange(1.0, 11.0)
    reserves, realized = _window_series(r, n=4, horizon=TWO)
    assert reserves.shape == realized.shape == (5,)
    np.testing.assert_allclose(realized, r[4:-1] + r[5:])
    with pytest.raises(InsufficientSampleError):
        _window_series(np.ones(5), n=4, horizon=TWO)


# ---------------------------------------------------------------------------
# synthetic panels


def test_make_synthetic_panel_layout():
    panel = make_synthetic_panel(Normal(), 5, 100, seed=1853)
    assert panel.n_portfolios == 5 and panel.n_obs == 100
    assert panel.ids == ("p000", "p001", "p002", "p003", "p004")
    # row p is the dedicated substream draw, independent of other rows
    expected = Normal().sample(RngStream(1853, 3).child(2), 100)
    np.testing.assert_array_equal(panel.returns[2], expected)
    again = make_synthetic_panel(Normal(), 5, 100, seed=1853)
    np.testing.assert_array_equal(panel.returns, again.returns)


def test_panel_slice_obs():
    panel = make_synthetic_panel(Normal(), 3, 60, seed=2)
    head = panel.slice_obs(0, 20)
    tail = panel.slice_obs(20, None)
    assert head.n_obs == 20 and tail.n_obs == 40
    np.testing.assert_array_equal(
        np.concatenate([head.returns, tail.returns], axis=1), panel.returns
    )


def test_return_panel_validation():
    with pytest.raises(ParameterError):
        ReturnPanel(("a", "a"), np.zeros((2, 10)))
    with pytest.raises(ParameterError):
        ReturnPanel(("a",), np.array([[1.0, np.nan]]))


# ---------------------------------------------------------------------------
# ingestion


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


WIDE = """date,alpha,beta
2024-01-01,0.01,-0.02
2024-01-02,-0.005,0.01
2024-01-03,0.002,0.003
2024-01-04,0.004,-0.001
"""

LONG = """date,portfolio,return
2024-01-01,alpha,0.01
2024-01-01,beta,-0.02
2024-01-02,alpha,-0.005
2024-01-02,beta,0.01
2024-01-03,alpha,0.002
2024-01-03,beta,0.003
2024-01-04,alpha,0.004
2024-01-04,beta,-0.001
"""


def test_wide_long_equivalence(tmp_path):
    wide = ingest_returns(_write(tmp_path, "w.csv", WIDE), layout="wide")
    long = ingest_returns(_write(tmp_path, "l.csv", LONG), layout="long")
    assert wide.ids == long.ids == ("alpha", "beta")
    np.testing.assert_array_equal(wide.returns, long.returns)
    auto = ingest_returns(_write(tmp_path, "a.csv", LONG))  # auto detects long
    np.testing.assert_array_equal(auto.returns, long.returns)


def test_european_delimiter_and_decimal(tmp_path):
    text = "date;alpha;beta\n2024-01-01;0,01;-0,02\n2024-01-02;-0,005;0,01\n"
    panel = ingest_returns(
        _write(tmp_path, "e.csv", text), layout="wide", delimiter=";", decimal=","
    )
    np.testing.assert_allclose(panel.returns[0], [0.01, -0.005])


def test_wide_gap_rows_dropped_and_reported(tmp_path):
    text = WIDE + "2024-01-05,,0.002\n2024-01-06,0.001,0.001\n"
    panel = ingest_returns(_write(tmp_path, "g.csv", text), layout="wide")
    assert panel.n_obs == 5
    assert any("2024-01-05" in note for note in panel.dropped)


def test_non_monotone_dates_rejected(tmp_path):
    text = "date,alpha\n2024-01-02,0.01\n2024-01-01,0.02\n"
    with pytest.raises(IngestionError, match="increas"):
        ingest_returns(_write(tmp_path, "m.csv", text), layout="wide")
    dup = "date,alpha\n2024-01-02,0.01\n2024-01-02,0.02\n"
    with pytest.raises(IngestionError):
        ingest_returns(_write(tmp_path, "d.csv", dup), layout="wide")


def test_noisy_file_rejected(tmp_path):
    rows = ["date,alpha"]
    rows += [f"2024-01-{d:02d},0.01" for d in range(1, 29)]
    rows[5] = rows[5].replace("0.01", "not-a-number")
    with pytest.raises(IngestionError, match="1%"):
        ingest_returns(_write(tmp_path, "n.csv", "\n".join(rows) + "\n"), layout="wide")


def test_long_duplicate_record_rejected(tmp_path):
    text = LONG + "2024-01-04,alpha,0.09\n"
    with pytest.raises(IngestionError, match="duplicate"):
        ingest_returns(_write(tmp_path, "dup.csv", text), layout="long")


def test_long_incomplete_dates_dropped(tmp_path):
    text = LONG + "2024-01-05,alpha,0.02\n"  # beta missing on the 5th
    panel = ingest_returns(_write(tmp_path, "inc.csv", text), layout="long")
    assert panel.n_obs == 4
    assert any("2024-01-05" in note for note in panel.dropped)


def test_missing_long_columns_rejected(tmp_path):
    text = "date,portfolio,value\n2024-01-01,a,0.01\n"
    with pytest.raises(IngestionError):
        ingest_returns(_write(tmp_path, "cols.csv", text), layout="long")


# ---------------------------------------------------------------------------
# empirical scalar fit


def test_fit_empirical_scalar_rate_and_minimality():
    gen = RngStream(17).generator()
    pre = gen.standard_t(5, size=400) * 0.01
    for alpha in (0.01, 0.05):
        c = fit_empirical_scalar(pre, alpha, ONE, n=50)
        reserves, realized = _window_series(pre, 50, ONE)
        rate = np.mean(realized + c * reserves <= 0)
        assert rate <= alpha
        down = np.nextafter(c, -np.inf)
        rate_down = np.mean(realized + down * reserves <= 0)
        assert rate_down > alpha or c == 0.0


def test_fit_empirical_scalar_cap_and_bounds():
    gen = RngStream(18).generator()
    pre = gen.normal(size=300) * 0.01
    c = fit_empirical_scalar(pre, 0.01, ONE, n=50)
    assert 0.0 <= c <= 100.0


def test_fit_empirical_scalar_insufficient_sample():
    with pytest.raises(InsufficientSampleError):
        fit_empirical_scalar(np.ones(49), 0.01, ONE, n=40)


def test_fit_empirical_scalar_unbounded():
    # every realized return deeply negative while reserves stay small:
    # no scalar within the cap reaches the target rate
    pre = np.concatenate([np.full(60, 0.001), np.full(60, -5.0)])
    with pytest.raises(UnboundedScalarError):
        fit_empirical_scalar(pre, 0.01, ONE, n=50)


def test_fit_empirical_scalar_doubling_invariance():
    gen = RngStream(19).generator()
    pre = gen.standard_t(6, size=350) * 0.02
    a = fit_empirical_scalar(pre, 0.025, ONE, n=50)
    b = fit_empirical_scalar(pre * 2.0, 0.025, ONE, n=50)
    assert a == pytest.approx(b, rel=1e-9)  # scale cancels in realized/reserve


# ---------------------------------------------------------------------------
# kurtosis inversion


def test_nu_from_kurtosis_inverts_student_t():
    # excess kurtosis of t(nu) is 6/(nu-4): the inversion nu = 4 + 6/k
    gen = RngStream(23).generator()
    draws = gen.standard_t(8, size=2_000_000)
    nu_hat = nu_from_kurtosis(draws)
    assert nu_hat == pytest.approx(8.0, abs=1.0)


def test_nu_from_kurtosis_clamps():
    gen = RngStream(24).generator()
    light = gen.uniform(-1, 1, size=100_000)  # negative excess kurtosis
    assert nu_from_kurtosis(light) == 100.0
    spiky = np.zeros(1000)
    spiky[0] = 100.0  # absurd kurtosis -> floor
    assert nu_from_kurtosis(spiky) == 4.5
    with pytest.raises(DegenerateFitError):
        nu_from_kurtosis(np.full(100, 2.0))


def test_normal_panel_nu_estimate_is_ceiling():
    draws = RngStream(25).generator().normal(size=500_000)
    assert nu_from_kurtosis(draws) > 60.0


# ---------------------------------------------------------------------------
# methods


def test_standard_methods_catalog():
    methods = standard_methods(ONE)
    assert [m.id for m in methods] == [1, 2, 3, 4, 5, 6]
    assert methods[0].source == Fixed(1.0)  # sqrt(1) for the one-period horizon
    two = standard_methods(TWO)
    assert two[0].source == Fixed(math.sqrt(2.0))
    labels = [m.label() for m in methods]
    assert labels[1].startswith("#2 ")


def test_method_config_roundtrip():
    for method in standard_methods(TWO, nu=8.0):
        rebuilt = method_from_config(method_to_config(method))
        assert rebuilt == method
    with pytest.raises(ParameterError):
        method_from_config({"id": 1, "source": {"kind": "mystery"}})


def test_method_validation():
    with pytest.raises(ParameterError):
        Fixed(-1.0)
    with pytest.raises(ParameterError):
        NormalRatioTimesSqrt(beta=0.6)
    with pytest.raises(ParameterError):
        StudentTUnbiasedCalibrated(nu=2.0)
    with pytest.raises(ParameterError):
        MethodSpec(0, Fixed(1.0))


def test_needs_pre_window_flags():
    assert MethodSpec(5, EmpiricalParametric()).needs_pre_window
    assert MethodSpec(6, EmpiricalNonParametric()).needs_pre_window
    assert not MethodSpec(3, GaussianUnbiasedCalibrated()).needs_pre_window


# ---------------------------------------------------------------------------
# rolling backtest


@pytest.fixture(scope="module")
def small_panels():
    full = make_synthetic_panel(StudentT(6.0), 12, 400, seed=99)
    return full.slice_obs(0, 200), full.slice_obs(200, None)


def test_rolling_backtest_fixed_counts(small_panels):
    _, evaluation = small_panels
    result = rolling_backtest(evaluation, MethodSpec(1, Fixed(1.0)), ONE, n=50)
    assert result.window_count == 150
    assert result.scalars.shape == (12,)
    np.testing.assert_allclose(result.scalars, 1.0)
    # counted breaches match a direct recomputation
    reserves, realized = _window_series(evaluation.returns[0], 50, ONE)
    direct = int(np.sum(realized + reserves <= 0))
    assert result.breach_counts[0] == direct
    assert result.exception_rates[0] == pytest.approx(direct / 150)


def test_breach_count_monotone_in_scalar(small_panels):
    _, evaluation = small_panels
    counts = []
    for c in (0.0, 0.5, 1.0, 2.0, 4.0):
        res = rolling_backtest(evaluation, MethodSpec(1, Fixed(c)), ONE, n=50)
        counts.append(res.breach_counts.sum())
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_rolling_backtest_calibrated_shared_scalar(small_panels):
    _, evaluation = small_panels
    result = rolling_backtest(
        evaluation, MethodSpec(3, GaussianUnbiasedCalibrated()), ONE, n=50,
        cal_M=20_000,
    )
    assert np.unique(result.scalars).size == 1  # one shared calibration
    assert "shared_c" in result.calibration_record
    assert result.calibration_record["shared_c"] == pytest.approx(result.scalars[0])


def test_rolling_backtest_per_portfolio_methods(small_panels):
    pre, evaluation = small_panels
    result = rolling_backtest(
        evaluation, MethodSpec(6, EmpiricalNonParametric()), ONE, n=50, pre=pre,
    )
    assert result.skipped == ()
    assert np.unique(result.scalars).size > 1  # portfolio-specific fits
    param = rolling_backtest(
        evaluation, MethodSpec(5, EmpiricalParametric()), ONE, n=50, pre=pre,
        cal_M=10_000,
    )
    assert "nu_hats" in param.calibration_record
    assert len(param.calibration_record["nu_hats"]) == 12


def test_rolling_backtest_pre_window_required(small_panels):
    _, evaluation = small_panels
    with pytest.raises(ParameterError):
        rolling_backtest(evaluation, MethodSpec(6, EmpiricalNonParametric()), ONE, n=50)


def test_rolling_backtest_workers_bit_identical(small_panels):
    pre, evaluation = small_panels
    a = rolling_backtest(
        evaluation, MethodSpec(5, EmpiricalParametric()), ONE, n=50, pre=pre,
        cal_M=10_000, workers=1,
    )
    b = rolling_backtest(
        evaluation, MethodSpec(5, EmpiricalParametric()), ONE, n=50, pre=pre,
        cal_M=10_000, workers=4,
    )
    np.testing.assert_array_equal(a.scalars, b.scalars)
    np.testing.assert_array_equal(a.breach_counts, b.breach_counts)


def test_rolling_backtest_skip_propagation(small_panels):
    pre, evaluation = small_panels
    # constant pre-window rows make the parametric fit degenerate: skipped
    returns = pre.returns.copy()
    returns[3] = 0.0
    broken = ReturnPanel(pre.ids, returns)
    result = rolling_backtest(
        evaluation, MethodSpec(5, EmpiricalParametric()), ONE, n=50, pre=broken,
        cal_M=10_000,
    )
    skipped_ids = [pid for pid, _ in result.skipped]
    assert skipped_ids == [pre.ids[3]]
    assert math.isnan(result.scalars[3])
    assert math.isnan(result.exception_rates[3])
    assert result.breach_counts[3] == 0
    assert not math.isnan(result.mean_rate)  # NaN-aware aggregate


def test_rolling_backtest_validation(small_panels):
    _, evaluation = small_panels
    with pytest.raises(ParameterError):
        rolling_backtest(evaluation, MethodSpec(1, Fixed(1.0)), ONE, n=0)
    with pytest.raises(ParameterError):
        rolling_backtest(evaluation, MethodSpec(1, Fixed(1.0)), ONE, n=50, alpha=0.0)
    with pytest.raises(ParameterError):
        rolling_backtest(evaluation.slice_obs(0, 50), MethodSpec(1, Fixed(1.0)), ONE, n=50)


def test_two_period_backtest_smoke(small_panels):
    _, evaluation = small_panels
    result = rolling_backtest(evaluation, MethodSpec(1, Fixed(math.sqrt(2))), TWO, n=50)
    assert result.window_count == 149


# ---------------------------------------------------------------------------
# aggregation and density


def test_aggregate_methods_best_share(small_panels):
    _, evaluation = small_panels
    results = [
        rolling_backtest(evaluation, MethodSpec(1, Fixed(0.8)), ONE, n=50),
        rolling_backtest(evaluation, MethodSpec(2, Fixed(1.2)), ONE, n=50),
    ]
    summary = aggregate_methods(results, target=0.01)
    assert summary.portfolio_count == 12
    shares = {row.method_id: row.best_share for row in summary.rows}
    assert sum(shares.values()) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        aggregate_methods([])
    with pytest.raises(ParameterError):
        aggregate_methods([results[0], results[0]])  # duplicate method id


def test_density_report_structure(small_panels):
    _, evaluation = small_panels
    results = [rolling_backtest(evaluation, MethodSpec(1, Fixed(1.0)), ONE, n=50)]
    report = density_report(results, bin_width=0.001)
    block = report.blocks[0]
    assert block.counts.sum() == 12  # every portfolio lands in some bin
    rows = report.to_rows()
    kinds = {r["kind"] for r in rows}
    assert "hist" in kinds
    hist_rows = [r for r in rows if r["kind"] == "hist"]
    assert all(r["x_left"] < r["x_right"] for r in hist_rows)
