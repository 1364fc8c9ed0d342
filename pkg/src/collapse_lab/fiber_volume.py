"""Local-model fiber-volume integral and asymptotic exponent recovery.

The local model at a point where the divisors of a face J meet is the
integral, over the simplex ``{u_j <= 0, sum_j u_j = L}``, of
``prod_b exp(2 c_b u_b) * h(u)`` in the coordinates ``j != j0``, where one
minimal-exponent coordinate ``j0`` is eliminated.  The induced density at
base radius ``s`` is ``D(s) = s**-2 * I(log s)`` and behaves like
``s**(-2(1-beta)) * (-log s)**(N-1)`` with ``beta = min c`` and ``N`` the
number of minimizing exponents.  :func:`fit_exponents` inverts that law
from samples.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import InvalidInputError

#: Default sample radii exp(-2**i).  The exponent range stops at i = 8:
#: beyond that s**-2 and the density leave the double-precision range.
DEFAULT_RADII = tuple(math.exp(-(2 ** i)) for i in range(3, 9))

_QUAD_LIMIT = 200

RationalLike = Fraction | int | str


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, str)):
        return Fraction(value)
    raise InvalidInputError(f"exponent {value!r} is not an exact rational")


def _weight_function(weight) -> Callable[[Sequence[float]], float]:
    if weight == "one":
        return lambda u: 1.0
    if weight == "perturbed":
        # Smooth positive perturbation, bounded away from zero on u <= 0.
        return lambda u: 1.0 + 0.5 * math.exp(u[0])
    if callable(weight):
        return weight
    raise InvalidInputError(f"unsupported weight {weight!r}")


@dataclass(frozen=True)
class LocalModelConfig:
    """Exponents of one nerve face plus quadrature/sampling choices.

    ``eliminated_index`` defaults to the smallest index attaining the
    minimal exponent; supplying a non-minimal index is rejected.  The
    integral itself does not depend on the choice.
    """

    exponents: tuple[Fraction, ...]
    eliminated_index: int | None = None
    weight: object = "one"
    sample_radii: tuple[float, ...] = DEFAULT_RADII

    def __post_init__(self):
        exps = tuple(_as_fraction(c) for c in self.exponents)
        object.__setattr__(self, "exponents", exps)
        if not 1 <= len(exps) <= 4:
            raise InvalidInputError("face size must be between 1 and 4")
        if any(c <= 0 for c in exps):
            raise InvalidInputError("all exponents must be positive")
        cmin = min(exps)
        j0 = self.eliminated_index
        if j0 is None:
            j0 = exps.index(cmin)
            object.__setattr__(self, "eliminated_index", j0)
        elif not (0 <= j0 < len(exps)) or exps[j0] != cmin:
            raise InvalidInputError("eliminated index must point at a minimal exponent")
        radii = tuple(float(s) for s in self.sample_radii)
        if any(not 0.0 < s < 1.0 for s in radii):
            raise InvalidInputError("sample radii must lie strictly inside (0, 1)")
        object.__setattr__(self, "sample_radii", radii)
        _weight_function(self.weight)

    @property
    def beta(self) -> Fraction:
        return min(self.exponents)

    @property
    def log_power(self) -> int:
        return sum(1 for c in self.exponents if c == self.beta)


def simplex_integral(cfg: LocalModelConfig, L: float) -> float:
    """Nested adaptive quadrature of the local model at level ``L < 0``.

    The coordinates ``j != j0`` are integrated innermost-first over the
    simplex ``u_j <= 0``, ``sum_{j != j0} u_j >= L``; the eliminated
    coordinate is ``u_{j0} = L - sum u_j``.  Relative tolerance 1e-9.
    """
    if not L < 0.0:
        raise InvalidInputError("level L must be negative")
    c = [float(x) for x in cfg.exponents]
    k = len(c)
    if k > 4:
        raise InvalidInputError("faces larger than 4 are unsupported")
    j0 = cfg.eliminated_index
    h = _weight_function(cfg.weight)
    free = [j for j in range(k) if j != j0]

    def integrand_at(point: list[float]) -> float:
        u = [0.0] * k
        total = 0.0
        for j, v in zip(free, point):
            u[j] = v
            total += v
        u[j0] = L - total
        val = h(u)
        for cj, uj in zip(c, u):
            val *= math.exp(2.0 * cj * uj)
        return val

    if k == 1:
        return integrand_at([])

    def nest(level: int, point: list[float], remaining: float) -> float:
        # remaining = L - sum of coordinates fixed so far; the next free
        # coordinate ranges over [remaining, 0].
        if level == len(free):
            return integrand_at(point)
        if remaining >= 0.0:
            return 0.0

        def f(v: float) -> float:
            return nest(level + 1, point + [v], remaining - v)

        val, _ = quad(f, remaining, 0.0, epsabs=0.0, epsrel=1e-10, limit=_QUAD_LIMIT)
        return val

    return nest(0, [], L)


def closed_form_oracle(cfg: LocalModelConfig, L: float) -> float:
    """Analytic antiderivative value for faces of size at most two, h == 1."""
    if cfg.weight != "one":
        raise InvalidInputError("closed form requires the constant weight")
    if not L < 0.0:
        raise InvalidInputError("level L must be negative")
    c = [float(x) for x in cfg.exponents]
    if len(c) == 1:
        return math.exp(2.0 * c[0] * L)
    if len(c) == 2:
        c1, c2 = c
        if cfg.exponents[0] == cfg.exponents[1]:
            return -L * math.exp(2.0 * c1 * L)
        return (math.exp(2.0 * c2 * L) - math.exp(2.0 * c1 * L)) / (2.0 * (c1 - c2))
    raise InvalidInputError("closed form only covers faces of size 1 or 2")


def model_density(cfg: LocalModelConfig, s: float) -> float:
    """The bare asymptotic law s**(-2(1-beta)) * (-log s)**(N-1)."""
    beta = float(cfg.beta)
    return s ** (-2.0 * (1.0 - beta)) * (-math.log(s)) ** (cfg.log_power - 1)


def fiber_volume_density(cfg: LocalModelConfig, s: float) -> float:
    """Induced fiber-volume density D(s) = s**-2 * I(log s) for s in (0, 1)."""
    if not 0.0 < s < 1.0:
        raise InvalidInputError("radius s must lie strictly inside (0, 1)")
    return s ** -2.0 * simplex_integral(cfg, math.log(s))


def _thread_count() -> int:
    raw = os.environ.get("COLLAPSE_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def sample_density(cfg: LocalModelConfig) -> list[tuple[float, float]]:
    """Evaluate D over the configured radii (parallel, deterministic order)."""
    radii = cfg.sample_radii
    workers = _thread_count()
    if workers == 1:
        values = [fiber_volume_density(cfg, s) for s in radii]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda s: fiber_volume_density(cfg, s), radii))
    return list(zip(radii, values))


@dataclass(frozen=True)
class ExponentFit:
    beta: float
    log_power: int
    offset: float


def fit_exponents(samples: Sequence[tuple[float, float]]) -> ExponentFit:
    """Least-squares inversion of log D = -2(1-beta) log s + (N-1) log(-log s) + c0.

    The log power is rounded to the nearest integer >= 1 and frozen, then
    beta is refit on the remaining one-parameter model.
    """
    if len(samples) < 4:
        raise InvalidInputError("need at least four samples")
    s = np.array([p[0] for p in samples], dtype=float)
    d = np.array([p[1] for p in samples], dtype=float)
    if np.any(np.diff(s) >= 0.0):
        raise InvalidInputError("sample radii must be strictly decreasing")
    if s[-1] > 1e-6:
        raise InvalidInputError("smallest sample radius must be <= 1e-6")
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise InvalidInputError("density samples must be finite and positive")

    ls = np.log(s)
    ll = np.log(-np.log(s))
    y = np.log(d)
    design = np.column_stack([ls, ll, np.ones_like(ls)])
    if np.linalg.matrix_rank(design) < 3:
        raise InvalidInputError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    n_hat = max(1, round(float(coef[1])) + 1)

    y2 = y - (n_hat - 1) * ll
    design2 = np.column_stack([ls, np.ones_like(ls)])
    coef2, *_ = np.linalg.lstsq(design2, y2, rcond=None)
    beta_hat = 1.0 + float(coef2[0]) / 2.0
    return ExponentFit(beta=beta_hat, log_power=n_hat, offset=float(coef2[1]))


def config_for_face(exponents: Sequence[RationalLike], **kwargs) -> LocalModelConfig:
    """Convenience constructor from rationals or 'p/q' strings."""
    return LocalModelConfig(exponents=tuple(_as_fraction(c) for c in exponents), **kwargs)
