"""Shared test fixtures and helpers."""
import numpy as np
import pytest

from riskscaling import (
    CalibrationProblem,
    Normal,
    PanelProvenance,
    RiskMeasureSpec,
    SecuredPanel,
    WorstCase,
)


@pytest.fixture
def tiny_normal_problem() -> CalibrationProblem:
    return CalibrationProblem(
        estimation_law=Normal(),
        n=50,
        target_law=Normal(),
        risk=RiskMeasureSpec("var", 0.01),
        estimator=WorstCase(),
    )


def make_panel(
    reserves: np.ndarray,
    targets: np.ndarray,
    risk: RiskMeasureSpec,
    mu_hats=None,
) -> SecuredPanel:
    """Hand-built panel for solver tests, bypassing Monte Carlo sampling."""
    provenance = PanelProvenance(
        seed=0, stream_id=0, size=targets.size, chunk=8192,
        failure_count=0, redraw_count=0,
    )
    return SecuredPanel(
        np.asarray(reserves, dtype=float),
        np.asarray(targets, dtype=float),
        None if mu_hats is None else np.asarray(mu_hats, dtype=float),
        risk,
        provenance,
    )
