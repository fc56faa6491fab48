"""Risk functionals on samples, classical scaling benchmarks, diagnostics.

The empirical VaR/ES here read large Monte Carlo samples (the secured-position
panels), so both use linear-time selection instead of a full sort.

Sign conventions match the estimators module: samples are P&L values and the
functionals return positive reserves for lossy tails. ``exception_rate``
counts strictly negative entries; the rolling backtest counts weak ones
(``<= 0``), which is that protocol's convention. The difference only matters
on ties, which have probability zero under continuous laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import special, stats

from .distributions import Normal, true_es, true_var
from .errors import InsufficientSampleError, ParameterError

VAR = "var"
ES = "es"


@dataclass(frozen=True)
class RiskMeasureSpec:
    kind: str
    alpha: float

    def __post_init__(self) -> None:
        if self.kind not in (VAR, ES):
            raise ParameterError(f"risk measure kind must be '{VAR}' or '{ES}', got {self.kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")

    def label(self) -> str:
        return f"{self.kind}({self.alpha:g})"


def risk_to_config(risk: RiskMeasureSpec) -> dict:
    return {"kind": risk.kind, "alpha": risk.alpha}


def risk_from_config(data: Mapping) -> RiskMeasureSpec:
    if not isinstance(data, Mapping):
        raise ParameterError(f"risk config must be a mapping, got {type(data).__name__}")
    unknown = set(data) - {"kind", "alpha"}
    if unknown:
        raise ParameterError(f"unknown risk config keys: {sorted(unknown)}")
    if "kind" not in data or "alpha" not in data:
        raise ParameterError("risk config requires 'kind' and 'alpha'")
    return RiskMeasureSpec(str(data["kind"]), float(data["alpha"]))


def _tail_rank(size: int, alpha: float) -> int:
    rank = int(math.floor(size * alpha))
    if rank < 1:
        raise InsufficientSampleError(
            f"sample of size {size} has no observations at level alpha={alpha}"
        )
    return rank


def empirical_var(sample: np.ndarray, alpha: float) -> float:
    """Negated order statistic at rank floor(size * alpha), 1-based."""
    sample = np.asarray(sample, dtype=float)
    rank = _tail_rank(sample.size, alpha)
    return -float(np.partition(sample, rank - 1)[rank - 1])


def empirical_es(sample: np.ndarray, alpha: float) -> float:
    """Negated mean of the floor(size * alpha) lowest observations."""
    sample = np.asarray(sample, dtype=float)
    rank = _tail_rank(sample.size, alpha)
    if rank == sample.size:
        return -float(sample.mean())
    return -float(np.partition(sample, rank - 1)[:rank].mean())


def empirical_risk(risk: RiskMeasureSpec, sample: np.ndarray) -> float:
    if risk.kind == VAR:
        return empirical_var(sample, risk.alpha)
    return empirical_es(sample, risk.alpha)


def exception_rate(secured: np.ndarray) -> float:
    """Fraction of strictly negative secured positions."""
    secured = np.asarray(secured, dtype=float)
    if secured.size == 0:
        raise ParameterError("exception rate of an empty sample is undefined")
    return float(np.count_nonzero(secured < 0.0)) / secured.size


def sqrt_time_scalar(m: float) -> float:
    """Square-root-of-time factor; down-scaling (m < 1) is allowed."""
    if not m > 0:
        raise ParameterError(f"horizon ratio must be positive, got {m}")
    return math.sqrt(m)


def mean_adjusted_time_scale(rho_1d: float, mu_hat: float, m: float) -> float:
    """Time scaling with the estimated location removed before the sqrt rule:
    -m * mu_hat + sqrt(m) * (rho_1d + mu_hat)."""
    return -m * mu_hat + math.sqrt(m) * (rho_1d + mu_hat)


def normal_risk_ratio(kind: str, alpha: float, beta: float) -> float:
    """Ratio rho_alpha(Z)/rho_beta(Z) for standard normal Z.

    Moves a reserve quoted at confidence level beta to level alpha. Computed
    from the exact normal functionals rather than a quantile-ratio shortcut
    so the VaR and ES variants share one definition.
    """
    for name, level in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < level < 0.5:
            raise ParameterError(f"{name} must lie in (0, 0.5), got {level}")
    z = Normal()
    if kind == VAR:
        return true_var(z, alpha) / true_var(z, beta)
    if kind == ES:
        return true_es(z, alpha) / true_es(z, beta)
    raise ParameterError(f"risk measure kind must be '{VAR}' or '{ES}', got {kind!r}")


def clt_adjusted_sqrt_scalar(nu: float, alpha: float, m: float) -> float:
    """Square-root-of-time factor shrunk by the normal-to-t quantile ratio.

    The one-period law is Student-t with ``nu`` degrees of freedom scaled to
    unit variance (the variance the CLT acts on), the m-period law is treated
    as normal, and the factor is
    sqrt(m) * ndtri(alpha) / (sqrt((nu-2)/nu) * t_nu^{-1}(alpha)).
    The unit-variance scaling matters: the raw t quantile would overstate the
    one-period reserve and understate the factor by sqrt(nu/(nu-2)).
    """
    if not 0.0 < alpha < 0.5:
        raise ParameterError(f"alpha must lie in (0, 0.5), got {alpha}")
    if not m > 0:
        raise ParameterError(f"horizon ratio must be positive, got {m}")
    if math.isinf(nu):
        return math.sqrt(m)
    if not nu > 2:
        raise ParameterError(f"nu must exceed 2 for a unit-variance t law, got {nu}")
    t_q = float(stats.t.ppf(alpha, df=nu)) * math.sqrt((nu - 2.0) / nu)
    return math.sqrt(m) * float(special.ndtri(alpha)) / t_q


GREEN = "green"
YELLOW = "yellow"
RED = "red"

_YELLOW_FROM = 5
_RED_FROM = 10


@dataclass(frozen=True)
class TrafficLight:
    zone: str
    tail_probability: float


def traffic_light(exceptions: int, window: int, p: float) -> TrafficLight:
    """Basel three-zone classification plus the yellow-entry probability.

    The zone depends only on the exception count (green <= 4, yellow 5..9,
    red >= 10, the 250-day convention). ``tail_probability`` is
    P(Bin(window, p) >= 5), the chance that a book breaching with
    probability p lands in yellow or worse; it does not depend on the
    observed count.
    """
    if not isinstance(exceptions, int) or isinstance(exceptions, bool):
        raise ParameterError(f"exceptions must be an integer, got {exceptions!r}")
    if window < 1:
        raise ParameterError(f"window must be positive, got {window}")
    if not 0 <= exceptions <= window:
        raise ParameterError(f"exceptions must lie in [0, {window}], got {exceptions}")
    if not 0.0 < p < 1.0:
        raise ParameterError(f"breach probability must lie in (0, 1), got {p}")
    if exceptions >= _RED_FROM:
        zone = RED
    elif exceptions >= _YELLOW_FROM:
        zone = YELLOW
    else:
        zone = GREEN
    tail = float(stats.binom.sf(_YELLOW_FROM - 1, window, p))
    return TrafficLight(zone, tail)
