"""Distribution specifications for profit-and-loss laws.

Specs are small frozen dataclasses describing either a base family (normal,
Student-t, Laplace, Cauchy, generalized normal, generalized Pareto) or a
transform of another spec (k-fold convolution, positive scaling, shift,
negation). Every spec can sample deterministically from an
:class:`~riskscaling.rng.RngStream`, and evaluate its cdf and quantile.

Sign conventions
----------------
Samples are profit-and-loss values: losses are negative, and risk functionals
at small ``alpha`` read the left tail. ``true_var(spec, alpha)`` is the
negated lower ``alpha``-quantile and ``true_es(spec, alpha)`` the negated
average of the quantile over ``(0, alpha)``, so both are positive for laws
with meaningful downside.

The one exception is the one-sided generalized Pareto family: a :class:`GPD`
spec is the standard positive-support law and is read as a *loss magnitude*
``L``. Its ``true_var``/``true_es`` therefore report the risk of the position
``X = -L`` (the classical positive tail formulas). To use the GPD as an
actual P&L law, wrap it in :class:`Negated`; the two routes agree.

Convolutions of non-stable families have no closed-form quantile. Those fall
back to a cached empirical table of one million draws under a seed pinned to
the spec, and carry Monte Carlo error of that scale; they are intended for
diagnostics, not for calibration itself (panels only ever need ``sample``).
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import ParameterError
from .rng import RngStream

_EMPIRICAL_TABLE_SIZE = 1_000_000

ArrayLike = Union[float, np.ndarray]


def _as_generator(rng: Union[RngStream, np.random.Generator]) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def _check_prob(p: ArrayLike) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ParameterError(f"probability must lie in (0, 1), got {p!r}")
    return arr


class DistributionSpec:
    """Base class for all distribution specs. Instances are immutable."""

    def sample(self, rng: Union[RngStream, np.random.Generator], count: int) -> np.ndarray:
        """Draw ``count`` i.i.d. values from the law described by this spec."""
        if count < 0:
            raise ParameterError(f"count must be nonnegative, got {count}")
        return self._sample(_as_generator(rng), int(count))

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, x: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def quantile(self, p: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def finite_mean(self) -> bool:
        return True

    def label(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Normal(DistributionSpec):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return gen.normal(self.mu, self.sigma, count)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return self.mu + self.sigma * special.ndtri(_check_prob(p))

    def mean(self) -> float:
        return self.mu

    def variance(self) -> float:
        return self.sigma**2

    def label(self) -> str:
        return f"normal({self.mu:g},{self.sigma:g})"


@dataclass(frozen=True)
class StudentT(DistributionSpec):
    """Student-t with ``nu > 2`` so the variance exists. Use Cauchy for nu=1."""

    nu: float

    def __post_init__(self) -> None:
        if not self.nu > 2:
            raise ParameterError(f"nu must exceed 2 (Cauchy is a separate family), got {self.nu}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return gen.standard_t(self.nu, count)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return stats.t.cdf(x, df=self.nu)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return stats.t.ppf(_check_prob(p), df=self.nu)

    def mean(self) -> float:
        return 0.0

    def variance(self) -> float:
        return self.nu / (self.nu - 2.0)

    def label(self) -> str:
        return f"student_t({self.nu:g})"


@dataclass(frozen=True)
class Laplace(DistributionSpec):
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ParameterError(f"scale must be positive, got {self.scale}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return gen.laplace(0.0, self.scale, count)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return stats.laplace.cdf(x, scale=self.scale)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return stats.laplace.ppf(_check_prob(p), scale=self.scale)

    def mean(self) -> float:
        return 0.0

    def variance(self) -> float:
        return 2.0 * self.scale**2

    def label(self) -> str:
        return f"laplace({self.scale:g})"


@dataclass(frozen=True)
class Cauchy(DistributionSpec):
    """Cauchy law. Mean and variance are undefined; ES rejects it."""

    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ParameterError(f"scale must be positive, got {self.scale}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return self.location + self.scale * gen.standard_cauchy(count)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return stats.cauchy.cdf(x, loc=self.location, scale=self.scale)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return stats.cauchy.ppf(_check_prob(p), loc=self.location, scale=self.scale)

    def mean(self) -> float:
        raise ParameterError("Cauchy has no mean")

    def variance(self) -> float:
        raise ParameterError("Cauchy has no variance")

    def finite_mean(self) -> bool:
        return False

    def label(self) -> str:
        return f"cauchy({self.location:g},{self.scale:g})"


@dataclass(frozen=True)
class GeneralizedNormal(DistributionSpec):
    """Generalized normal with density proportional to exp(-|x|^beta).

    ``beta=2`` recovers a normal (with sigma = 1/sqrt(2)); larger beta gives
    lighter tails. Unit scale; use :func:`standardize` or :class:`Scale` to
    adjust.
    """

    beta: float

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        # |X|^beta ~ Gamma(1/beta); sign is an independent fair coin.
        signs = np.where(gen.random(count) < 0.5, -1.0, 1.0)
        w = gen.standard_gamma(1.0 / self.beta, count)
        return signs * w ** (1.0 / self.beta)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return stats.gennorm.cdf(x, beta=self.beta)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return stats.gennorm.ppf(_check_prob(p), beta=self.beta)

    def mean(self) -> float:
        return 0.0

    def variance(self) -> float:
        return special.gamma(3.0 / self.beta) / special.gamma(1.0 / self.beta)

    def label(self) -> str:
        return f"generalized_normal({self.beta:g})"


@dataclass(frozen=True)
class GPD(DistributionSpec):
    """Generalized Pareto law on ``[u, inf)`` (``xi < 0`` bounds the support).

    Read as a loss magnitude; see the module docstring for how ``true_var``
    and ``true_es`` interpret it and why panels should wrap it in
    :class:`Negated`.
    """

    u: float
    xi: float
    beta: float

    def __post_init__(self) -> None:
        if not self.xi < 1:
            raise ParameterError(f"xi must be below 1, got {self.xi}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        tail = 1.0 - gen.random(count)  # in (0, 1]
        if self.xi == 0.0:
            return self.u - self.beta * np.log(tail)
        return self.u + (self.beta / self.xi) * (tail ** (-self.xi) - 1.0)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return stats.genpareto.cdf(x, c=self.xi, loc=self.u, scale=self.beta)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return stats.genpareto.ppf(_check_prob(p), c=self.xi, loc=self.u, scale=self.beta)

    def mean(self) -> float:
        return self.u + self.beta / (1.0 - self.xi)

    def variance(self) -> float:
        if not self.xi < 0.5:
            raise ParameterError(f"GPD variance requires xi < 1/2, got xi={self.xi}")
        return self.beta**2 / ((1.0 - self.xi) ** 2 * (1.0 - 2.0 * self.xi))

    def label(self) -> str:
        return f"gpd({self.u:g},{self.xi:g},{self.beta:g})"


@dataclass(frozen=True)
class Convolution(DistributionSpec):
    """Sum of ``k`` independent copies of ``base``."""

    base: DistributionSpec
    k: int

    def __post_init__(self) -> None:
        if not isinstance(self.k, int) or self.k < 1:
            raise ParameterError(f"k must be a positive integer, got {self.k!r}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        draws = self.base._sample(gen, count * self.k)
        return draws.reshape(count, self.k).sum(axis=1)

    def _analytic_equivalent(self) -> DistributionSpec | None:
        """Closed-form law of the k-fold sum, or None if there is none.

        Convolution commutes with scaling, shifting and negation, and the
        normal and Cauchy families are stable under summation.
        """
        b = self.base
        if isinstance(b, Normal):
            return Normal(self.k * b.mu, math.sqrt(self.k) * b.sigma)
        if isinstance(b, Cauchy):
            return Cauchy(self.k * b.location, self.k * b.scale)
        if isinstance(b, Scale):
            inner = Convolution(b.base, self.k)._analytic_equivalent()
            return None if inner is None else Scale(inner, b.a)
        if isinstance(b, Shift):
            inner = Convolution(b.base, self.k)._analytic_equivalent()
            return None if inner is None else Shift(inner, self.k * b.m)
        if isinstance(b, Negated):
            inner = Convolution(b.base, self.k)._analytic_equivalent()
            return None if inner is None else Negated(inner)
        if isinstance(b, Convolution):
            return Convolution(b.base, self.k * b.k)._analytic_equivalent()
        return None

    def cdf(self, x: ArrayLike) -> ArrayLike:
        analytic = self._analytic_equivalent()
        if analytic is not None:
            return analytic.cdf(x)
        table = _empirical_table(self)
        return np.searchsorted(table, np.asarray(x, dtype=float), side="right") / table.size

    def quantile(self, p: ArrayLike) -> ArrayLike:
        analytic = self._analytic_equivalent()
        if analytic is not None:
            return analytic.quantile(p)
        return np.quantile(_empirical_table(self), _check_prob(p))

    def mean(self) -> float:
        return self.k * self.base.mean()

    def variance(self) -> float:
        return self.k * self.base.variance()

    def finite_mean(self) -> bool:
        return self.base.finite_mean()

    def label(self) -> str:
        return f"conv{self.k}({self.base.label()})"


@dataclass(frozen=True)
class Scale(DistributionSpec):
    """Law of ``a * X`` for ``a > 0``."""

    base: DistributionSpec
    a: float

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ParameterError(f"scale factor must be positive, got {self.a}")

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return self.a * self.base._sample(gen, count)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return self.base.cdf(np.asarray(x, dtype=float) / self.a)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return self.a * self.base.quantile(p)

    def mean(self) -> float:
        return self.a * self.base.mean()

    def variance(self) -> float:
        return self.a**2 * self.base.variance()

    def finite_mean(self) -> bool:
        return self.base.finite_mean()

    def label(self) -> str:
        return f"scale{self.a:g}({self.base.label()})"


@dataclass(frozen=True)
class Shift(DistributionSpec):
    """Law of ``X + m``."""

    base: DistributionSpec
    m: float

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return self.base._sample(gen, count) + self.m

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return self.base.cdf(np.asarray(x, dtype=float) - self.m)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return self.base.quantile(p) + self.m

    def mean(self) -> float:
        return self.base.mean() + self.m

    def variance(self) -> float:
        return self.base.variance()

    def finite_mean(self) -> bool:
        return self.base.finite_mean()

    def label(self) -> str:
        return f"shift{self.m:g}({self.base.label()})"


@dataclass(frozen=True)
class Negated(DistributionSpec):
    """Law of ``-X``. Turns a one-sided loss-magnitude law into a P&L law."""

    base: DistributionSpec

    def _sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return -self.base._sample(gen, count)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        # Continuous laws only, so P(X >= -x) = 1 - F(-x).
        return 1.0 - np.asarray(self.base.cdf(-np.asarray(x, dtype=float)))

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return -np.asarray(self.base.quantile(1.0 - _check_prob(p)))

    def mean(self) -> float:
        return -self.base.mean()

    def variance(self) -> float:
        return self.base.variance()

    def finite_mean(self) -> bool:
        return self.base.finite_mean()

    def label(self) -> str:
        return f"neg({self.base.label()})"


# ---------------------------------------------------------------------------
# empirical quantile tables for non-stable convolutions

_TABLE_CACHE: dict[DistributionSpec, np.ndarray] = {}


def _empirical_table(spec: DistributionSpec) -> np.ndarray:
    """Sorted draws under a seed pinned to the spec's serialized form."""
    table = _TABLE_CACHE.get(spec)
    if table is None:
        canonical = json.dumps(spec_to_config(spec), sort_keys=True)
        seed = zlib.crc32(canonical.encode("utf-8"))
        table = np.sort(spec.sample(RngStream(seed, stream_id=0), _EMPIRICAL_TABLE_SIZE))
        table.setflags(write=False)
        _TABLE_CACHE[spec] = table
    return table


# ---------------------------------------------------------------------------
# module-level operations

def sample(spec: DistributionSpec, rng: Union[RngStream, np.random.Generator], count: int) -> np.ndarray:
    return spec.sample(rng, count)


def cdf(spec: DistributionSpec, x: ArrayLike) -> ArrayLike:
    return spec.cdf(x)


def quantile(spec: DistributionSpec, p: ArrayLike) -> ArrayLike:
    return spec.quantile(p)


def true_var(spec: DistributionSpec, alpha: float) -> float:
    """Value-at-risk of the law at level ``alpha``, as a positive reserve.

    Defined as the negated lower ``alpha``-quantile, except for a bare
    :class:`GPD` spec, which is read as a loss magnitude (see module
    docstring): there the reserve is the upper ``1 - alpha`` quantile.
    """
    alpha = float(_check_prob(alpha))
    if isinstance(spec, GPD):
        return _gpd_loss_var(spec, alpha)
    return -float(spec.quantile(alpha))


def true_es(spec: DistributionSpec, alpha: float) -> float:
    """Expected shortfall of the law at level ``alpha``.

    The negated average of the quantile over ``(0, alpha)``. Closed form for
    normal and GPD specs; scaling, shifting and negation recurse; stable
    convolutions reduce and non-stable ones use the cached empirical table.
    Everything else integrates the quantile by adaptive quadrature (relative
    tolerance well below 1e-6).
    """
    alpha = float(_check_prob(alpha))
    if not spec.finite_mean():
        raise ParameterError(f"expected shortfall needs a finite mean, got {spec.label()}")
    if isinstance(spec, GPD):
        return _gpd_loss_es(spec, alpha)
    if isinstance(spec, Negated) and isinstance(spec.base, GPD):
        return _gpd_loss_es(spec.base, alpha)
    if isinstance(spec, Normal):
        z = float(special.ndtri(alpha))
        return -spec.mu + spec.sigma * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi) / alpha
    if isinstance(spec, Scale):
        return spec.a * true_es(spec.base, alpha)
    if isinstance(spec, Shift):
        return true_es(spec.base, alpha) - spec.m
    if isinstance(spec, Convolution):
        analytic = spec._analytic_equivalent()
        if analytic is not None:
            return true_es(analytic, alpha)
        table = _empirical_table(spec)
        k = int(math.floor(table.size * alpha))
        if k < 1:
            raise ParameterError(f"alpha={alpha} leaves no tail mass in the empirical table")
        return -float(table[:k].mean())
    return _quadrature_es(spec, alpha)


def _quadrature_es(spec: DistributionSpec, alpha: float) -> float:
    # Substitute u = alpha s^2 to tame the integrable singularity at u = 0.
    def integrand(s: float) -> float:
        return 2.0 * alpha * s * float(spec.quantile(alpha * s * s))

    value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-9, limit=200)
    return -value / alpha


def _gpd_loss_var(spec: GPD, alpha: float) -> float:
    if spec.xi == 0.0:
        return spec.u + spec.beta * math.log(1.0 / alpha)
    return spec.u + (spec.beta / spec.xi) * (alpha**-spec.xi - 1.0)


def _gpd_loss_es(spec: GPD, alpha: float) -> float:
    var = _gpd_loss_var(spec, alpha)
    return var / (1.0 - spec.xi) + (spec.beta - spec.xi * spec.u) / (1.0 - spec.xi)


def standardize(spec: DistributionSpec) -> DistributionSpec:
    """Rescale the law to unit variance.

    Normals rescale in place; every other family is wrapped in
    :class:`Scale`. Raises :class:`ParameterError` when the variance does not
    exist (Cauchy, GPD with xi >= 1/2).
    """
    if isinstance(spec, Normal):
        return Normal(spec.mu / spec.sigma, 1.0)
    var = spec.variance()
    if var == 1.0:
        return spec
    return Scale(spec, 1.0 / math.sqrt(var))


def describe(spec: DistributionSpec) -> str:
    """Short human-readable label, used in table outputs."""
    return spec.label()


# ---------------------------------------------------------------------------
# config-grammar serialization

_FAMILY_FIELDS: dict[str, tuple[type, tuple[str, ...]]] = {
    "normal": (Normal, ("mu", "sigma")),
    "student_t": (StudentT, ("nu",)),
    "laplace": (Laplace, ("scale",)),
    "cauchy": (Cauchy, ("location", "scale")),
    "generalized_normal": (GeneralizedNormal, ("beta",)),
    "gpd": (GPD, ("u", "xi", "beta")),
}

_TRANSFORM_FIELDS: dict[str, tuple[type, tuple[str, ...]]] = {
    "convolution": (Convolution, ("k",)),
    "scale": (Scale, ("a",)),
    "shift": (Shift, ("m",)),
    "negate": (Negated, ()),
}


def spec_to_config(spec: DistributionSpec) -> dict:
    """Serialize a spec to the nested ``family/params/transform`` grammar."""
    chain: list[dict] = []
    node = spec
    while True:
        for kind, (cls, fields) in _TRANSFORM_FIELDS.items():
            if type(node) is cls:
                chain.append({"kind": kind, **{f: getattr(node, f) for f in fields}})
                node = node.base
                break
        else:
            break
    for family, (cls, fields) in _FAMILY_FIELDS.items():
        if type(node) is cls:
            out: dict = {"family": family, "params": {f: getattr(node, f) for f in fields}}
            # chain was collected outermost-first; the grammar nests innermost-first
            transform: dict | None = None
            for entry in chain:
                entry = dict(entry)
                if transform is not None:
                    entry["transform"] = transform
                transform = entry
            if transform is not None:
                out["transform"] = transform
            return out
    raise ParameterError(f"cannot serialize spec of type {type(node).__name__}")


def spec_from_config(data: Mapping) -> DistributionSpec:
    """Parse the ``family/params/transform`` grammar back into a spec."""
    if not isinstance(data, Mapping):
        raise ParameterError(f"distribution config must be a mapping, got {type(data).__name__}")
    unknown = set(data) - {"family", "params", "transform"}
    if unknown:
        raise ParameterError(f"unknown distribution config keys: {sorted(unknown)}")
    family = data.get("family")
    if family not in _FAMILY_FIELDS:
        raise ParameterError(f"unknown distribution family: {family!r}")
    cls, fields = _FAMILY_FIELDS[family]
    params = dict(data.get("params") or {})
    unknown = set(params) - set(fields)
    if unknown:
        raise ParameterError(f"unknown parameters for {family}: {sorted(unknown)}")
    kwargs = {f: float(params[f]) for f in fields if f in params}
    try:
        spec: DistributionSpec = cls(**kwargs)
    except TypeError as exc:
        raise ParameterError(f"family {family} is missing required parameters: {exc}") from None

    transform = data.get("transform")
    while transform is not None:
        if not isinstance(transform, Mapping):
            raise ParameterError("transform must be a mapping")
        kind = transform.get("kind")
        if kind not in _TRANSFORM_FIELDS:
            raise ParameterError(f"unknown transform kind: {kind!r}")
        tcls, tfields = _TRANSFORM_FIELDS[kind]
        unknown = set(transform) - {"kind", "transform", *tfields}
        if unknown:
            raise ParameterError(f"unknown keys for transform {kind}: {sorted(unknown)}")
        args = []
        for f in tfields:
            if f not in transform:
                raise ParameterError(f"transform {kind} requires key {f!r}")
            args.append(int(transform[f]) if f == "k" else float(transform[f]))
        spec = tcls(spec, *args)
        transform = transform.get("transform")
    return spec
