"""Panel construction and the scaling-factor solver."""
import math

import numpy as np
import pytest

from riskscaling import (
    CalibrationProblem,
    Convolution,
    EmpiricalVaR,
    GaussianPlugInVaR,
    IID,
    Normal,
    OverlappingSum,
    ParameterError,
    RiskMeasureSpec,
    StudentT,
    UnboundedScalarError,
    WorstCase,
    build_panel,
    calibrate,
    closed_form_gaussian_scalar,
    decompose,
    one_period_law,
    problem_from_config,
    problem_to_config,
    risk_of_secured,
    robust_calibrate,
    solve_scalar,
)
from riskscaling.calibration import DEFAULT_TOL

from conftest import make_panel

VAR1 = RiskMeasureSpec("var", 0.01)


def grid_scan_oracle(panel, risk, tol=DEFAULT_TOL, step=None, c_max=50.0):
    """Independent brute-force solution: first nonpositive risk on a fine grid."""
    step = step or tol / 4
    c = 0.0
    while c <= c_max:
        if risk_of_secured(panel, risk, c) <= 0:
            return c
        c += step
    raise AssertionError("oracle found no crossing")


def test_solver_known_crossing():
    # base offsets are a fixed grid, coefficient 1: VaR crossing is analytic
    gen = np.random.default_rng(1)
    targets = gen.normal(size=20_000)
    panel = make_panel(np.ones_like(targets), targets, VAR1)
    result = solve_scalar(panel, VAR1)
    # S(c) = X + c; crossing where the alpha-tail point reaches 0
    expected = -np.sort(targets)[int(0.01 * targets.size) - 1]
    assert result.c_star == pytest.approx(expected, abs=2 * DEFAULT_TOL)
    assert risk_of_secured(panel, VAR1, result.c_star) <= 0
    assert risk_of_secured(panel, VAR1, max(result.c_star - 4 * DEFAULT_TOL, 0.0)) > 0
    assert not result.diagnostics.monotonicity_violated
    assert result.bracket[0] < result.c_star <= result.bracket[1]


def test_solver_already_riskless():
    gen = np.random.default_rng(2)
    targets = gen.normal(loc=10.0, size=20_000)  # far above water
    panel = make_panel(np.ones_like(targets), targets, VAR1)
    result = solve_scalar(panel, VAR1)
    assert result.c_star == 0.0
    assert result.diagnostics.already_riskless
    assert result.bracket == (0.0, 0.0)


def test_solver_unbounded():
    gen = np.random.default_rng(3)
    targets = gen.normal(size=20_000)
    reserves = np.where(np.arange(targets.size) % 10 == 0, -1.0, 0.0)
    panel = make_panel(reserves, targets, VAR1)  # 10% of rows sink with c
    with pytest.raises(UnboundedScalarError):
        solve_scalar(panel, VAR1)


def test_solver_grid_fallback_flag_and_correctness():
    # enough non-positive coefficients to fail the monotone gate (> 1%) while
    # the flagged rows sit safely above water, keeping the problem bounded
    gen = np.random.default_rng(4)
    m = 20_000
    targets = gen.normal(size=m)
    reserves = np.ones(m)
    flip = gen.choice(m, size=int(0.02 * m), replace=False)
    reserves[flip] = 0.0
    targets[flip] = 5.0
    panel = make_panel(reserves, targets, VAR1)
    result = solve_scalar(panel, VAR1)
    assert result.diagnostics.monotonicity_violated
    assert result.diagnostics.negative_reserve_fraction == 0.0
    oracle = grid_scan_oracle(panel, VAR1)
    assert result.c_star == pytest.approx(oracle, abs=10 * DEFAULT_TOL + DEFAULT_TOL / 4)
    assert risk_of_secured(panel, VAR1, result.c_star) <= 0


def test_solver_vs_grid_oracle_on_random_panels():
    gen = np.random.default_rng(20)
    for trial in range(20):
        m = 4000
        targets = gen.standard_t(6, size=m) - 0.2
        reserves = np.abs(gen.normal(loc=1.0, scale=0.3, size=m)) + 0.05
        alpha = float(gen.choice([0.01, 0.02, 0.05]))
        risk = RiskMeasureSpec("var", alpha)
        panel = make_panel(reserves, targets, risk)
        result = solve_scalar(panel, risk)
        if result.diagnostics.already_riskless:
            assert risk_of_secured(panel, risk, 0.0) <= 0
            continue
        oracle = grid_scan_oracle(panel, risk)
        assert result.c_star == pytest.approx(oracle, abs=DEFAULT_TOL + DEFAULT_TOL / 4), (
            f"trial {trial}"
        )


def test_solver_es_risk():
    gen = np.random.default_rng(6)
    targets = gen.normal(size=40_000)
    panel = make_panel(np.ones_like(targets), targets, RiskMeasureSpec("es", 0.025))
    result = solve_scalar(panel, RiskMeasureSpec("es", 0.025))
    # ES crossing: mean of the tail reaches zero
    oracle = grid_scan_oracle(panel, RiskMeasureSpec("es", 0.025))
    assert result.c_star == pytest.approx(oracle, abs=DEFAULT_TOL)


def test_mean_adjusted_panel_coefficients():
    gen = np.random.default_rng(7)
    m = 15_000
    targets = gen.normal(size=m)
    reserves = np.abs(gen.normal(loc=1.5, size=m))
    mu_hats = gen.normal(scale=0.1, size=m)
    panel = make_panel(reserves, targets, VAR1, mu_hats=mu_hats)
    assert panel.mean_adjusted
    np.testing.assert_allclose(panel.base_offsets(), targets - mu_hats)
    np.testing.assert_allclose(panel.c_coefficients(), reserves + mu_hats)
    np.testing.assert_allclose(
        panel.secured(2.0), (targets - mu_hats) + 2.0 * (reserves + mu_hats)
    )


def test_batch_std_error_nan_when_batches_cannot_resolve_tail():
    gen = np.random.default_rng(8)
    # 20 batches of 500: floor(500 * 0.0005) = 0 -> NaN
    targets = gen.normal(size=10_000)
    panel = make_panel(np.ones_like(targets), targets, RiskMeasureSpec("var", 0.0005))
    result = solve_scalar(panel, RiskMeasureSpec("var", 0.0005))
    assert math.isnan(result.mc_std_error)
    # at alpha = 1% the same panel resolves: finite se
    panel2 = make_panel(np.ones(10_000), targets, VAR1)
    assert solve_scalar(panel2, VAR1).mc_std_error > 0


def test_solve_rejects_bad_tol():
    panel = make_panel(np.ones(10_000), np.random.default_rng(9).normal(size=10_000), VAR1)
    with pytest.raises(ParameterError):
        solve_scalar(panel, VAR1, tol=0.0)


def test_risk_of_secured_rejects_negative_c():
    panel = make_panel(np.ones(10_000), np.zeros(10_000), VAR1)
    with pytest.raises(ParameterError):
        risk_of_secured(panel, VAR1, -0.5)


# ---------------------------------------------------------------------------
# panel construction


def test_build_panel_validation(tiny_normal_problem):
    with pytest.raises(ParameterError):
        build_panel(tiny_normal_problem, 9_999, seed=1)
    with pytest.raises(ParameterError):
        build_panel(tiny_normal_problem, 20_000.0, seed=1)  # not an int
    with pytest.raises(ParameterError):
        build_panel(tiny_normal_problem, 20_000, seed=1, workers=0)


def test_build_panel_warns_below_default_scale(tiny_normal_problem):
    with pytest.warns(UserWarning, match=r"^panel size M="):
        build_panel(tiny_normal_problem, 20_000, seed=1)


def test_build_panel_deterministic_and_worker_invariant(tiny_normal_problem):
    a = build_panel(tiny_normal_problem, 30_000, seed=7, workers=1)
    b = build_panel(tiny_normal_problem, 30_000, seed=7, workers=3)
    np.testing.assert_array_equal(a.reserves, b.reserves)
    np.testing.assert_array_equal(a.targets, b.targets)
    c = build_panel(tiny_normal_problem, 30_000, seed=8, workers=1)
    assert not np.array_equal(a.targets, c.targets)


def test_build_panel_stream_separation(tiny_normal_problem):
    a = build_panel(tiny_normal_problem, 30_000, seed=7, stream_id=0)
    b = build_panel(tiny_normal_problem, 30_000, seed=7, stream_id=1)
    assert not np.array_equal(a.targets, b.targets)
    p = build_panel(tiny_normal_problem, 30_000, seed=7, path=(3, 1))
    assert not np.array_equal(a.targets, p.targets)
    assert p.provenance.path == (3, 1)


def test_build_panel_provenance(tiny_normal_problem):
    panel = build_panel(tiny_normal_problem, 30_000, seed=7, stream_id=2)
    pv = panel.provenance
    assert (pv.seed, pv.stream_id, pv.size) == (7, 2, 30_000)
    assert pv.failure_count == 0 and pv.redraw_count == 0
    assert panel.size == 30_000
    assert not panel.mean_adjusted


def test_overlapping_construction_induces_dependence():
    problem = CalibrationProblem(
        estimation_law=Normal(),
        n=250,
        target_law=Convolution(Normal(), 10),
        risk=VAR1,
        estimator=EmpiricalVaR(0.01),
        sample_construction=OverlappingSum(10, 259),
    )
    panel = build_panel(problem, 20_000, seed=3)
    # overlapping 10-day sums have sd sqrt(10); reserves track the 1% point
    assert 1.5 < panel.reserves.mean() / math.sqrt(10) < 3.5
    with pytest.raises(ParameterError):
        CalibrationProblem(
            estimation_law=Normal(),
            n=250,
            target_law=Convolution(Normal(), 10),
            risk=VAR1,
            estimator=EmpiricalVaR(0.01),
            sample_construction=OverlappingSum(10, 260),  # raw_count mismatch
        )


def test_one_period_law():
    iid_problem = CalibrationProblem(Normal(), 50, Normal(), VAR1, WorstCase())
    assert one_period_law(iid_problem) == Normal()
    ov = CalibrationProblem(
        Normal(), 250, Convolution(Normal(), 10), VAR1, EmpiricalVaR(0.01),
        sample_construction=OverlappingSum(10, 259),
    )
    assert one_period_law(ov) == Convolution(Normal(), 10)


# ---------------------------------------------------------------------------
# end-to-end calibration


def test_calibrate_worst_case_normal(tiny_normal_problem):
    result = calibrate(tiny_normal_problem, 50_000, seed=1853)
    assert 1.05 < result.c_star < 1.25
    assert result.mc_std_error < 0.05


def test_calibrate_scale_invariance_exact(tiny_normal_problem):
    from riskscaling import Scale

    scaled = CalibrationProblem(
        estimation_law=Scale(Normal(), 100.0),
        n=50,
        target_law=Scale(Normal(), 100.0),
        risk=VAR1,
        estimator=WorstCase(),
    )
    a = calibrate(tiny_normal_problem, 20_000, seed=5)
    b = calibrate(scaled, 20_000, seed=5)
    assert abs(a.c_star - b.c_star) < 1e-10


def test_calibrate_unbounded_problem():
    problem = CalibrationProblem(Normal(), 1, Normal(), VAR1, WorstCase())
    with pytest.raises(UnboundedScalarError):
        calibrate(problem, 10_000, seed=1)


def test_decompose_product_consistency():
    problem = CalibrationProblem(
        estimation_law=Normal(),
        n=250,
        target_law=Normal(0.0, math.sqrt(10)),
        risk=VAR1,
        estimator=GaussianPlugInVaR(0.01),
        mean_adjusted=True,
    )
    result = decompose(problem, 50_000, seed=1853)
    assert result.combined_c > result.time_c  # confidence stage contributes
    product = result.confidence_c * result.time_c
    amount = 3 * result.combined.mc_std_error + 2 * DEFAULT_TOL
    assert product == pytest.approx(result.combined_c, abs=amount)


def test_robust_calibrate_sup_and_validation():
    problems = [
        CalibrationProblem(StudentT(nu), 50, StudentT(nu), VAR1, WorstCase())
        for nu in (5.0, 10.0)
    ]
    result = robust_calibrate(problems, 20_000, seed=11)
    assert result.c_star_sup == pytest.approx(max(m.c_star for m in result.members))
    assert not result.unbounded
    with pytest.raises(ParameterError):
        robust_calibrate([], 20_000, seed=11)
    mixed = problems[:1] + [
        CalibrationProblem(Normal(), 50, Normal(), VAR1, EmpiricalVaR(0.02))
    ]
    with pytest.raises(ParameterError):
        robust_calibrate(mixed, 20_000, seed=11)


# ---------------------------------------------------------------------------
# closed form and config


def test_closed_form_gaussian_scalar_monotone():
    # decreasing in n, increasing as alpha shrinks
    assert closed_form_gaussian_scalar(50, 0.01) > closed_form_gaussian_scalar(250, 0.01)
    assert closed_form_gaussian_scalar(30, 0.0005) > closed_form_gaussian_scalar(30, 0.01)
    with pytest.raises(ParameterError):
        closed_form_gaussian_scalar(1, 0.01)
    with pytest.raises(ParameterError):
        closed_form_gaussian_scalar(250, 0.0)


def test_closed_form_matches_unbiased_estimator_construction():
    # c* = z_alpha / (sqrt((n+1)/n) * unit-variance t quantile) for the plug-in
    import scipy.stats as stats

    n, alpha = 100, 0.01
    got = closed_form_gaussian_scalar(n, alpha)
    z = stats.norm.ppf(alpha)
    t_q = stats.t.ppf(alpha, n - 1)
    expected = math.sqrt((n + 1) / n) * t_q / z
    assert got == pytest.approx(expected, rel=1e-12)
    assert got > 1.0  # the plain plug-in under-reserves, so the scalar exceeds 1


def test_problem_config_roundtrip():
    problems = [
        CalibrationProblem(Normal(), 250, Normal(), VAR1, GaussianPlugInVaR(0.01),
                           mean_adjusted=True),
        CalibrationProblem(
            Normal(), 250, Convolution(Normal(), 10), VAR1, EmpiricalVaR(0.01),
            sample_construction=OverlappingSum(10, 259),
        ),
        CalibrationProblem(StudentT(6.0), 50, StudentT(6.0),
                           RiskMeasureSpec("es", 0.025), WorstCase()),
    ]
    for problem in problems:
        rebuilt = problem_from_config(problem_to_config(problem))
        assert rebuilt == problem
    with pytest.raises(ParameterError):
        problem_from_config({"n": 50})


def test_problem_validation():
    with pytest.raises(ParameterError):
        CalibrationProblem(Normal(), 0, Normal(), VAR1, WorstCase())
    with pytest.raises(ParameterError):
        CalibrationProblem(Normal(), 1, Normal(), VAR1, GaussianPlugInVaR(0.01))
    from riskscaling import Cauchy

    with pytest.raises(ParameterError):  # ES needs a finite-mean target
        CalibrationProblem(Cauchy(), 50, Cauchy(), RiskMeasureSpec("es", 0.01), WorstCase())
