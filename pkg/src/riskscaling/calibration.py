"""The calibration engine.

A calibration problem asks: by how much must a risk estimator's reserve be
scaled so that the secured position ``S(c) = X + c * rho_hat`` carries no
residual risk? The answer, the optimal scalar c*, is the smallest c with
``rho(S(c)) <= 0``.

The engine realizes that definition by Monte Carlo:

1. :func:`build_panel` draws M independent (estimation sample, target P&L)
   pairs and reduces each estimation sample to its reserve. The panel is
   built once; every evaluation in c reuses it, so the objective
   ``c -> empirical risk of (targets + c * reserves)`` is a fixed piecewise
   linear function and root finding is deterministic.
2. :func:`solve_scalar` brackets the sign change (doubling from [0, 4]) and
   bisects. When reserves can be negative the objective need not be
   monotone; a dense grid scan then guards the bisection and the result is
   flagged.
3. :func:`calibrate`, :func:`robust_calibrate` and :func:`decompose` wrap
   the two steps for single problems, families (supremum over members), and
   the confidence/time two-stage split.

Reproducibility: panels are generated in fixed-size chunks, each chunk from
its own child stream of the panel's root :class:`~riskscaling.rng.RngStream`.
Workers pick up whole chunks and write into disjoint slices, so results are
bit-identical for any worker count.

Mean adjustment (``mean_adjusted=True``) centers the secured position with
the estimation-sample mean: ``S(c) = X - mu_hat + c * (rho_hat + mu_hat)``.
The mu_hat draws are stored next to the reserves so both variants read the
same panel.
"""
from __future__ import annotations

import concurrent.futures
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

import numpy as np
from scipy import special, stats

from .distributions import (
    Convolution,
    DistributionSpec,
    spec_from_config,
    spec_to_config,
)
from .errors import (
    InsufficientSampleError,
    PanelError,
    ParameterError,
    UnboundedScalarError,
)
from .estimators import (
    RiskEstimator,
    ScaledEstimator,
    estimator_from_config,
    estimator_to_config,
)
from .riskmeasures import (
    ES,
    RiskMeasureSpec,
    empirical_risk,
    risk_from_config,
    risk_to_config,
)
from .rng import RngStream

_CHUNK = 8192
_MIN_PANEL = 10_000
_WARN_PANEL = 100_000
_MAX_BRACKET = 1e6
_BATCHES = 20
_REDRAW_LIMIT = 100
_FAILURE_RATE_LIMIT = 1e-3
_MONOTONE_GATE = 0.99
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class IID:
    """Estimation samples are n i.i.d. draws from the estimation law."""

    def label(self) -> str:
        return "iid"


@dataclass(frozen=True)
class OverlappingSum:
    """Estimation samples are overlapping window-sums of raw draws.

    From raw_count consecutive raws X~_1..X~_r the sample is
    X_i = X~_i + ... + X~_{i+window-1}, i = 1..raw_count-window+1, so the
    panel's n must equal raw_count - window + 1.
    """

    window: int
    raw_count: int

    def __post_init__(self) -> None:
        if not isinstance(self.window, int) or self.window < 1:
            raise ParameterError(f"window must be a positive integer, got {self.window!r}")
        if not isinstance(self.raw_count, int) or self.raw_count < self.window:
            raise ParameterError(
                f"raw_count must be an integer >= window, got {self.raw_count!r}"
            )

    def label(self) -> str:
        return f"overlapping_sum(w={self.window},r={self.raw_count})"


SampleConstruction = Union[IID, OverlappingSum]


@dataclass(frozen=True)
class CalibrationProblem:
    estimation_law: DistributionSpec
    n: int
    target_law: DistributionSpec
    risk: RiskMeasureSpec
    estimator: RiskEstimator
    sample_construction: SampleConstruction = field(default_factory=IID)
    mean_adjusted: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n!r}")
        if self.n < self.estimator.min_sample_size():
            raise ParameterError(
                f"estimator {self.estimator.label()} needs at least "
                f"{self.estimator.min_sample_size()} observations, problem has n={self.n}"
            )
        sc = self.sample_construction
        if isinstance(sc, OverlappingSum) and sc.raw_count != self.n + sc.window - 1:
            raise ParameterError(
                f"overlapping construction needs raw_count = n + window - 1 = "
                f"{self.n + sc.window - 1}, got {sc.raw_count}"
            )
        if self.risk.kind == ES and not self.target_law.finite_mean():
            raise ParameterError(
                f"expected shortfall requires a finite-mean target law, got "
                f"{self.target_law.label()}"
            )


@dataclass(frozen=True)
class PanelProvenance:
    seed: int
    stream_id: int
    size: int
    chunk: int
    failure_count: int
    redraw_count: int
    path: tuple[int, ...] = ()


@dataclass(frozen=True)
class SecuredPanel:
    reserves: np.ndarray
    targets: np.ndarray
    mu_hats: Optional[np.ndarray]
    risk: RiskMeasureSpec
    provenance: PanelProvenance

    @property
    def size(self) -> int:
        return self.targets.size

    @property
    def mean_adjusted(self) -> bool:
        return self.mu_hats is not None

    def base_offsets(self) -> np.ndarray:
        """The c-independent part of the secured position."""
        if self.mu_hats is None:
            return self.targets
        return self.targets - self.mu_hats

    def c_coefficients(self) -> np.ndarray:
        """The coefficient of c in the secured position."""
        if self.mu_hats is None:
            return self.reserves
        return self.reserves + self.mu_hats

    def secured(self, c: float) -> np.ndarray:
        return self.base_offsets() + c * self.c_coefficients()


def _estimation_matrix(
    problem: CalibrationProblem, stream: RngStream, rows: int
) -> np.ndarray:
    sc = problem.sample_construction
    if isinstance(sc, IID):
        draws = problem.estimation_law.sample(stream, rows * problem.n)
        return draws.reshape(rows, problem.n)
    raw = problem.estimation_law.sample(stream, rows * sc.raw_count)
    raw = raw.reshape(rows, sc.raw_count)
    padded = np.concatenate([np.zeros((rows, 1)), np.cumsum(raw, axis=1)], axis=1)
    return padded[:, sc.window:] - padded[:, :-sc.window]


def _build_chunk(
    problem: CalibrationProblem,
    root: RngStream,
    j: int,
    rows: int,
    reserves: np.ndarray,
    targets: np.ndarray,
    mu_hats: Optional[np.ndarray],
    lo: int,
) -> tuple[int, int]:
    """Fill rows [lo, lo+rows) of the output arrays. Returns failure and
    redraw counts for this chunk."""
    mat = _estimation_matrix(problem, root.child(0, j), rows)
    values = problem.estimator.evaluate_batch(mat)
    if mu_hats is not None:
        means = mat.mean(axis=1)
    bad = np.flatnonzero(np.isnan(values))
    failures = bad.size
    redraws = 0
    attempt = 0
    while bad.size:
        attempt += 1
        if attempt > _REDRAW_LIMIT:
            raise PanelError(
                f"estimator {problem.estimator.label()} still failing after "
                f"{_REDRAW_LIMIT} redraw rounds in chunk {j}"
            )
        redraws += bad.size
        retry = _estimation_matrix(problem, root.child(0, j, attempt), bad.size)
        retry_values = problem.estimator.evaluate_batch(retry)
        values[bad] = retry_values
        if mu_hats is not None:
            means[bad] = retry.mean(axis=1)
        bad = bad[np.isnan(retry_values)]
    reserves[lo : lo + rows] = values
    if mu_hats is not None:
        mu_hats[lo : lo + rows] = means
    targets[lo : lo + rows] = problem.target_law.sample(root.child(1, j), rows)
    return failures, redraws


def build_panel(
    problem: CalibrationProblem,
    M: int,
    seed: int,
    stream_id: int = 0,
    workers: int = 1,
    path: tuple[int, ...] = (),
) -> SecuredPanel:
    """Draw the M (reserve, target) pairs that parameterize rho(S(c)).

    Estimation samples and targets come from independent substreams. Rows
    whose estimator evaluation fails (GPD fits can) are redrawn from
    per-chunk retry streams; a first-pass failure rate above 0.1% aborts
    instead, since heavy redrawing would distort the estimator's law.

    ``path`` prepends extra stream-tree keys for callers that need whole
    disjoint panel families under one seed (per-portfolio calibrations in
    the backtest use it).
    """
    if not isinstance(M, int) or M < _MIN_PANEL:
        raise ParameterError(f"panel size must be an integer >= {_MIN_PANEL}, got {M!r}")
    if M < _WARN_PANEL:
        warnings.warn(
            f"panel size M={M} is below {_WARN_PANEL}; Monte Carlo error will be large",
            UserWarning,
            stacklevel=2,
        )
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    root = RngStream(seed, stream_id, tuple(int(k) for k in path))
    reserves = np.empty(M)
    targets = np.empty(M)
    mu_hats = np.empty(M) if problem.mean_adjusted else None
    chunks = [(j, lo, min(_CHUNK, M - lo)) for j, lo in enumerate(range(0, M, _CHUNK))]

    def run(args: tuple[int, int, int]) -> tuple[int, int]:
        j, lo, rows = args
        return _build_chunk(problem, root, j, rows, reserves, targets, mu_hats, lo)

    if workers == 1:
        counts = [run(c) for c in chunks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(run, chunks))
    failure_count = sum(c[0] for c in counts)
    redraw_count = sum(c[1] for c in counts)
    if failure_count > _FAILURE_RATE_LIMIT * M:
        raise PanelError(
            f"estimator evaluation failed on {failure_count} of {M} draws "
            f"(rate {failure_count / M:.3%}, limit {_FAILURE_RATE_LIMIT:.1%})"
        )
    provenance = PanelProvenance(
        seed=seed,
        stream_id=stream_id,
        size=M,
        chunk=_CHUNK,
        failure_count=failure_count,
        redraw_count=redraw_count,
        path=root.path,
    )
    return SecuredPanel(reserves, targets, mu_hats, problem.risk, provenance)


def risk_of_secured(panel: SecuredPanel, risk: RiskMeasureSpec, c: float) -> float:
    """Empirical rho of the secured position at scaling factor c."""
    if not c >= 0:
        raise ParameterError(f"scaling factor must be nonnegative, got {c}")
    return empirical_risk(risk, panel.secured(c))


@dataclass(frozen=True)
class SolverDiagnostics:
    negative_reserve_fraction: float
    monotonicity_violated: bool
    already_riskless: bool = False
    unbounded: bool = False


@dataclass(frozen=True)
class ScalarResult:
    c_star: float
    mc_std_error: float
    solver_iterations: int
    bracket: tuple[float, float]
    diagnostics: SolverDiagnostics

    def __post_init__(self) -> None:
        lo, hi = self.bracket
        if not lo <= self.c_star <= hi:
            raise ParameterError(
                f"c_star {self.c_star} outside solver bracket [{lo}, {hi}]"
            )
        if not (math.isnan(self.mc_std_error) or self.mc_std_error >= 0):
            raise ParameterError(f"mc_std_error must be >= 0 or NaN, got {self.mc_std_error}")


@dataclass
class _CoreSolution:
    c_star: float
    iterations: int
    bracket: tuple[float, float]
    monotonicity_violated: bool
    already_riskless: bool


def _solve_core(
    base: np.ndarray, coef: np.ndarray, risk: RiskMeasureSpec, tol: float
) -> _CoreSolution:
    evals = 0

    def objective(c: float) -> float:
        nonlocal evals
        evals += 1
        return empirical_risk(risk, base + c * coef)

    if objective(0.0) <= 0:
        return _CoreSolution(0.0, evals, (0.0, 0.0), False, True)

    lo, hi = 0.0, 4.0
    while objective(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > _MAX_BRACKET:
            raise UnboundedScalarError(
                f"no scaling factor up to {_MAX_BRACKET:g} secures the position "
                f"(risk at {lo:g} still positive)"
            )
    bracket = (lo, hi)

    monotone = float(np.mean(coef > 0)) >= _MONOTONE_GATE
    if not monotone:
        # risk(S(c)) may dip and recover when enough reserves are negative;
        # walk a grid to the first nonpositive value before bisecting.
        step = 10.0 * tol
        g_prev, g = lo, lo + step
        seg = None
        while g < hi:
            if objective(g) <= 0:
                seg = (g_prev, g)
                break
            g_prev, g = g, g + step
        lo, hi = seg if seg is not None else (g_prev, hi)

    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if objective(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return _CoreSolution(hi, evals, bracket, not monotone, False)


def solve_scalar(
    panel: SecuredPanel, risk: RiskMeasureSpec, tol: float = DEFAULT_TOL
) -> ScalarResult:
    """Smallest c with empirical rho(S(c)) <= 0, with a Monte Carlo error bar.

    The error bar is batch-based: the panel splits into 20 contiguous
    batches, each re-solved on its own; the spread of batch solutions scaled
    by 1/sqrt(20) estimates the full-panel standard error. It is NaN when
    batches are too small to resolve the tail rank or when any batch is
    unbounded.
    """
    if not tol > 0:
        raise ParameterError(f"tolerance must be positive, got {tol}")
    base = panel.base_offsets()
    coef = panel.c_coefficients()
    core = _solve_core(base, coef, risk, tol)
    se = _batch_std_error(base, coef, risk, tol)
    diagnostics = SolverDiagnostics(
        negative_reserve_fraction=float(np.mean(coef < 0)),
        monotonicity_violated=core.monotonicity_violated,
        already_riskless=core.already_riskless,
    )
    return ScalarResult(
        c_star=core.c_star,
        mc_std_error=se,
        solver_iterations=core.iterations,
        bracket=core.bracket,
        diagnostics=diagnostics,
    )


def _batch_std_error(
    base: np.ndarray, coef: np.ndarray, risk: RiskMeasureSpec, tol: float
) -> float:
    size = base.size // _BATCHES
    if math.floor(size * risk.alpha) < 1:
        return math.nan
    values = []
    for b in range(_BATCHES):
        sl = slice(b * size, (b + 1) * size)
        try:
            values.append(_solve_core(base[sl], coef[sl], risk, tol).c_star)
        except UnboundedScalarError:
            return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(_BATCHES))


def calibrate(
    problem: CalibrationProblem,
    M: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> ScalarResult:
    """build_panel followed by solve_scalar."""
    panel = build_panel(problem, M, seed, stream_id=0, workers=workers)
    return solve_scalar(panel, problem.risk, tol)


def closed_form_gaussian_scalar(n: int, alpha: float) -> float:
    """Optimal scalar for Gaussian VaR with the unbiased estimator:
    sqrt((n+1)/n) * t_{n-1}^{-1}(alpha) / ndtri(alpha)."""
    if not isinstance(n, int) or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n!r}")
    if not 0.0 < alpha < 0.5:
        raise ParameterError(f"alpha must lie in (0, 0.5), got {alpha}")
    return (
        math.sqrt((n + 1) / n)
        * float(stats.t.ppf(alpha, df=n - 1))
        / float(special.ndtri(alpha))
    )


@dataclass(frozen=True)
class RobustResult:
    c_star_sup: float
    members: tuple[ScalarResult, ...]

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.c_star_sup)


def robust_calibrate(
    problems: list[CalibrationProblem],
    M: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> RobustResult:
    """Most conservative scalar across a family of problems.

    All members share the seed (common random numbers), which keeps the
    per-member curve smooth in the family parameter and the supremum stable.
    An unbounded member makes the supremum infinite; its entry carries
    ``diagnostics.unbounded`` instead of aborting the sweep.
    """
    if not problems:
        raise ParameterError("robust calibration needs at least one problem")
    first = problems[0]
    for p in problems[1:]:
        if p.estimator != first.estimator or p.risk != first.risk:
            raise ParameterError(
                "robust calibration requires a common estimator and risk measure"
            )
    members = []
    for p in problems:
        panel = build_panel(p, M, seed, stream_id=0, workers=workers)
        try:
            members.append(solve_scalar(panel, p.risk, tol))
        except UnboundedScalarError:
            members.append(
                ScalarResult(
                    c_star=math.inf,
                    mc_std_error=math.nan,
                    solver_iterations=0,
                    bracket=(0.0, math.inf),
                    diagnostics=SolverDiagnostics(
                        negative_reserve_fraction=float(
                            np.mean(panel.c_coefficients() < 0)
                        ),
                        monotonicity_violated=False,
                        unbounded=True,
                    ),
                )
            )
    sup = max(m.c_star for m in members)
    return RobustResult(sup, tuple(members))


@dataclass(frozen=True)
class DecompositionResult:
    confidence: ScalarResult
    time: ScalarResult
    combined: ScalarResult

    @property
    def confidence_c(self) -> float:
        return self.confidence.c_star

    @property
    def time_c(self) -> float:
        return self.time.c_star

    @property
    def combined_c(self) -> float:
        return self.combined.c_star


def one_period_law(problem: CalibrationProblem) -> DistributionSpec:
    """Law of a single estimation-sample observation."""
    sc = problem.sample_construction
    if isinstance(sc, OverlappingSum):
        if sc.window == 1:
            return problem.estimation_law
        return Convolution(problem.estimation_law, sc.window)
    return problem.estimation_law


def decompose(
    problem: CalibrationProblem,
    M: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> DecompositionResult:
    """Split c* into a confidence scalar and a time scalar.

    The confidence stage solves the problem with the target law replaced by
    one estimation-horizon P&L, isolating estimation error at the short
    horizon. The time stage solves the original problem with the estimator
    pre-multiplied by the confidence scalar. The combined scalar is the
    direct single-stage solution. Each stage runs on its own independent
    stream (ids 1, 2 and 0), so confidence * time agrees with combined only
    statistically, not identically.
    """
    conf_problem = replace(problem, target_law=one_period_law(problem))
    conf_panel = build_panel(conf_problem, M, seed, stream_id=1, workers=workers)
    conf = solve_scalar(conf_panel, conf_problem.risk, tol)

    time_problem = replace(
        problem, estimator=ScaledEstimator(problem.estimator, conf.c_star)
    )
    time_panel = build_panel(time_problem, M, seed, stream_id=2, workers=workers)
    time = solve_scalar(time_panel, time_problem.risk, tol)

    combined_panel = build_panel(problem, M, seed, stream_id=0, workers=workers)
    combined = solve_scalar(combined_panel, problem.risk, tol)
    return DecompositionResult(confidence=conf, time=time, combined=combined)


# ---------------------------------------------------------------------------
# config-grammar serialization

def construction_to_config(sc: SampleConstruction) -> dict:
    if isinstance(sc, IID):
        return {"kind": "iid"}
    return {"kind": "overlapping_sum", "window": sc.window, "raw_count": sc.raw_count}


def construction_from_config(data: Mapping) -> SampleConstruction:
    if not isinstance(data, Mapping):
        raise ParameterError(
            f"sample_construction must be a mapping, got {type(data).__name__}"
        )
    kind = data.get("kind")
    if kind == "iid":
        unknown = set(data) - {"kind"}
        if unknown:
            raise ParameterError(f"unknown keys for iid construction: {sorted(unknown)}")
        return IID()
    if kind == "overlapping_sum":
        unknown = set(data) - {"kind", "window", "raw_count"}
        if unknown:
            raise ParameterError(
                f"unknown keys for overlapping_sum construction: {sorted(unknown)}"
            )
        if "window" not in data or "raw_count" not in data:
            raise ParameterError("overlapping_sum requires 'window' and 'raw_count'")
        return OverlappingSum(int(data["window"]), int(data["raw_count"]))
    raise ParameterError(f"unknown sample construction kind: {kind!r}")


def problem_to_config(problem: CalibrationProblem) -> dict:
    return {
        "estimation_law": spec_to_config(problem.estimation_law),
        "n": problem.n,
        "sample_construction": construction_to_config(problem.sample_construction),
        "target_law": spec_to_config(problem.target_law),
        "risk": risk_to_config(problem.risk),
        "estimator": estimator_to_config(problem.estimator),
        "mean_adjusted": problem.mean_adjusted,
    }


_PROBLEM_KEYS = {
    "estimation_law",
    "n",
    "sample_construction",
    "target_law",
    "risk",
    "estimator",
    "mean_adjusted",
}


def problem_from_config(data: Mapping) -> CalibrationProblem:
    if not isinstance(data, Mapping):
        raise ParameterError(f"problem config must be a mapping, got {type(data).__name__}")
    unknown = set(data) - _PROBLEM_KEYS
    if unknown:
        raise ParameterError(f"unknown problem config keys: {sorted(unknown)}")
    missing = {"estimation_law", "n", "target_law", "risk", "estimator"} - set(data)
    if missing:
        raise ParameterError(f"problem config is missing keys: {sorted(missing)}")
    construction = construction_from_config(
        data.get("sample_construction", {"kind": "iid"})
    )
    return CalibrationProblem(
        estimation_law=spec_from_config(data["estimation_law"]),
        n=int(data["n"]),
        target_law=spec_from_config(data["target_law"]),
        risk=risk_from_config(data["risk"]),
        estimator=estimator_from_config(data["estimator"]),
        sample_construction=construction,
        mean_adjusted=bool(data["mean_adjusted"]) if "mean_adjusted" in data else False,
    )
