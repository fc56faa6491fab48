"""Named parameter sets for the reproduction commands.

Each preset pins one benchmark study to its exact problem definition so a
single CLI invocation reproduces it. Family sweeps use fixed grids: the
Student-t ray [5, inf) becomes {5, 7, 10, 20, 30, 50, 100} plus the Normal
limit member, and the GPD shape interval [-0.5, 0.5] becomes an 11-point
grid of step 0.1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .calibration import CalibrationProblem, OverlappingSum
from .distributions import (
    Cauchy,
    Convolution,
    DistributionSpec,
    GeneralizedNormal,
    GPD,
    Laplace,
    Negated,
    Normal,
    StudentT,
    standardize,
)
from .errors import ConfigError
from .estimators import (
    EmpiricalES,
    EmpiricalVaR,
    GaussianPlugInVaR,
    GPDPlugInES,
    WorstCase,
)
from .riskmeasures import ES, VAR, RiskMeasureSpec


@dataclass(frozen=True)
class CalibratePreset:
    """One problem for the plain calibrate command."""

    name: str
    problem: CalibrationProblem
    decompose: bool
    note: str


@dataclass(frozen=True)
class GridPreset:
    """Closed-form Gaussian scalar surface over (n, alpha)."""

    name: str
    n_lo: int
    n_hi: int
    alpha_lo: float
    alpha_hi: float
    note: str


@dataclass(frozen=True)
class RobustPreset:
    """A parameterized family whose scalar is the member supremum."""

    name: str
    parameter: str
    labels: tuple[str, ...]
    values: tuple[float, ...]
    problems: tuple[CalibrationProblem, ...]
    note: str


@dataclass(frozen=True)
class TablePreset:
    """A list of (row label, problem) pairs, decomposed row by row."""

    name: str
    labels: tuple[str, ...]
    problems: tuple[CalibrationProblem, ...]
    note: str


Preset = object  # any of the four dataclasses above


def _unit_variance(law: DistributionSpec) -> DistributionSpec:
    # Cauchy has no variance; the scalars are scale-invariant anyway
    if isinstance(law, Cauchy):
        return law
    return standardize(law)


def _t_family(nus: tuple[int, ...]) -> list[tuple[str, DistributionSpec]]:
    rows: list[tuple[str, DistributionSpec]] = [("laplace", Laplace())]
    rows += [(f"student-t({nu})", StudentT(nu)) for nu in nus]
    rows.append(("normal", Normal()))
    rows.append(("gn(3)", GeneralizedNormal(3.0)))
    return rows


# The 10-day VaR table stops at nu=30, the other two run through nu=100,
# and the ES table has no Cauchy row because ES needs a finite mean.
_TABLE1_NUS = (3, 5, 7, 10, 20, 30)
_TABLE23_NUS = (3, 5, 7, 10, 20, 30, 50, 100)


def _gaussian_var() -> CalibratePreset:
    problem = CalibrationProblem(
        estimation_law=Normal(),
        n=250,
        target_law=Normal(),
        risk=RiskMeasureSpec(VAR, 0.01),
        estimator=GaussianPlugInVaR(0.01),
        mean_adjusted=True,
    )
    return CalibratePreset(
        name="gaussian-var",
        problem=problem,
        decompose=False,
        note="Gaussian plug-in VaR, n=250, alpha=1%; closed form gives 1.0085",
    )


def _gaussian_heatmap() -> GridPreset:
    return GridPreset(
        name="gaussian-heatmap",
        n_lo=10,
        n_hi=250,
        alpha_lo=0.005,
        alpha_hi=0.025,
        note="closed-form Gaussian scalar surface over sample size and level",
    )


def _gpd_es_sweep() -> RobustPreset:
    values = tuple(round(-0.5 + 0.1 * k, 1) for k in range(11))
    problems = []
    labels = []
    for xi in values:
        law = Negated(GPD(0.0, xi, 1.0))
        problems.append(
            CalibrationProblem(
                estimation_law=law,
                n=50,
                target_law=law,
                risk=RiskMeasureSpec(ES, 0.05),
                estimator=GPDPlugInES(0.05),
            )
        )
        labels.append(f"xi={xi:+.1f}")
    return RobustPreset(
        name="gpd-es-sweep",
        parameter="xi",
        labels=tuple(labels),
        values=values,
        problems=tuple(problems),
        note="GPD shape sweep for the PWM plug-in ES at 5%, n=50; sup near 1.5",
    )


def _overlapping_var() -> CalibratePreset:
    problem = CalibrationProblem(
        estimation_law=Normal(),
        n=250,
        target_law=Convolution(Normal(), 10),
        risk=RiskMeasureSpec(VAR, 0.01),
        estimator=EmpiricalVaR(0.01),
        sample_construction=OverlappingSum(window=10, raw_count=259),
    )
    return CalibratePreset(
        name="overlapping-var",
        problem=problem,
        decompose=False,
        note="overlapping 10-day empirical VaR under normality; c* near 1.14",
    )


def _student_t_es_sweep() -> RobustPreset:
    nus = (5, 7, 10, 20, 30, 50, 100)
    labels = tuple(f"nu={nu}" for nu in nus) + ("normal",)
    values = tuple(float(nu) for nu in nus) + (float("inf"),)
    problems = []
    for nu in nus:
        law: DistributionSpec = StudentT(nu)
        problems.append(
            CalibrationProblem(
                estimation_law=law,
                n=50,
                target_law=law,
                risk=RiskMeasureSpec(ES, 0.025),
                estimator=EmpiricalES(0.025, 3),
            )
        )
    problems.append(
        CalibrationProblem(
            estimation_law=Normal(),
            n=50,
            target_law=Normal(),
            risk=RiskMeasureSpec(ES, 0.025),
            estimator=EmpiricalES(0.025, 3),
        )
    )
    return RobustPreset(
        name="student-t-es-sweep",
        parameter="nu",
        labels=labels,
        values=values,
        problems=tuple(problems),
        note="Student-t ray for the three-lowest ES at 2.5%, n=50; sup near 1.55",
    )


def _table_1() -> TablePreset:
    rows = _t_family(_TABLE1_NUS) + [("cauchy", Cauchy())]
    labels, problems = [], []
    for label, law in rows:
        base = _unit_variance(law)
        labels.append(label)
        problems.append(
            CalibrationProblem(
                estimation_law=base,
                n=250,
                target_law=Convolution(base, 10),
                risk=RiskMeasureSpec(VAR, 0.01),
                estimator=EmpiricalVaR(0.01),
            )
        )
    return TablePreset(
        name="table-1",
        labels=tuple(labels),
        problems=tuple(problems),
        note="1-day to 10-day empirical VaR scalars, n=250, alpha=1%",
    )


def _table_2() -> TablePreset:
    rows = _t_family(_TABLE23_NUS) + [("cauchy", Cauchy())]
    labels, problems = [], []
    for label, law in rows:
        base = _unit_variance(law)
        labels.append(label)
        problems.append(
            CalibrationProblem(
                estimation_law=Convolution(base, 2),
                n=12,
                target_law=base,
                risk=RiskMeasureSpec(VAR, 0.01),
                estimator=WorstCase(),
            )
        )
    return TablePreset(
        name="table-2",
        labels=tuple(labels),
        problems=tuple(problems),
        note="monthly-to-10-day worst-case VaR scalars for exotic risk, n=12",
    )


def _table_3() -> TablePreset:
    rows = _t_family(_TABLE23_NUS)
    labels, problems = [], []
    for label, law in rows:
        base = _unit_variance(law)
        labels.append(label)
        problems.append(
            CalibrationProblem(
                estimation_law=base,
                n=750,
                target_law=Convolution(base, 25),
                risk=RiskMeasureSpec(ES, 0.001),
                estimator=EmpiricalES(0.008, 6),
            )
        )
    return TablePreset(
        name="table-3",
        labels=tuple(labels),
        problems=tuple(problems),
        note="10-day to annual economic capital ES scalars, n=750, alpha=0.1%",
    )


_PRESETS: dict[str, Callable[[], Preset]] = {
    "gaussian-var": _gaussian_var,
    "gaussian-heatmap": _gaussian_heatmap,
    "gpd-es-sweep": _gpd_es_sweep,
    "overlapping-var": _overlapping_var,
    "student-t-es-sweep": _student_t_es_sweep,
    "table-1": _table_1,
    "table-2": _table_2,
    "table-3": _table_3,
}


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESETS))


def get_preset(name: str):
    try:
        builder = _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available presets: {', '.join(preset_names())}"
        ) from None
    return builder()
