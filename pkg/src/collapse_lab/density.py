"""Singular densities on the punctured torus and their grid realizations.

A density is a smooth positive background times a bracket factor

    1 + sum_l eta_l(r_l) * (r_l**(-2(1-beta_l)) * (-log(r_l/R_l))**(N_l-1) - 1)

with ``r_l`` the chart distance to puncture l and ``eta_l`` a smooth cutoff
that is 1 inside half the cutoff radius and 0 outside it.  Cells close to a
puncture are cell-averaged by adaptive polar quadrature so the grid field
keeps the integrable-singularity mass instead of a sampled spike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import InvalidInputError
from .grids import GridField, TorusDomain, interp_periodic, toroidal_delta, toroidal_distance


def _smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0.0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
        b = np.where(x < 1.0, np.exp(-1.0 / np.maximum(1.0 - x, 1e-300)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class Puncture:
    """Puncture profile parameters: position, beta, log power, radii."""

    pos: tuple[float, float]
    beta: Fraction
    log_power: int = 1
    cutoff: float = 0.08
    scale: float = 0.32

    def __post_init__(self):
        beta = self.beta if isinstance(self.beta, Fraction) else Fraction(self.beta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "pos", (float(self.pos[0]), float(self.pos[1])))
        if not 0 < beta <= 1:
            raise InvalidInputError("puncture beta must lie in (0, 1]")
        if self.log_power < 1:
            raise InvalidInputError("puncture log power must be >= 1")
        if not 0.0 < self.cutoff:
            raise InvalidInputError("cutoff radius must be positive")
        if not self.scale > self.cutoff:
            raise InvalidInputError("profile scale must exceed the cutoff radius")

    def profile(self, r):
        """r**(-2(1-beta)) * (-log(r/R))**(N-1); blows up only at r = 0."""
        r = np.asarray(r, dtype=float)
        b = float(self.beta)
        with np.errstate(divide="ignore", over="ignore"):
            p = r ** (-2.0 * (1.0 - b))
            if self.log_power > 1:
                p = p * (-np.log(r / self.scale)) ** (self.log_power - 1)
        return p

    def eta(self, r):
        """Smooth cutoff: 1 on r <= cutoff/2, 0 on r >= cutoff."""
        r = np.asarray(r, dtype=float)
        return _smoothstep((self.cutoff - r) / (self.cutoff / 2.0))

    def bracket_term(self, r):
        arr = np.atleast_1d(np.asarray(r, dtype=float))
        eta = self.eta(arr)
        out = np.zeros_like(arr, dtype=float)
        mask = eta > 0.0
        if np.any(mask):
            out[mask] = eta[mask] * (self.profile(arr[mask]) - 1.0)
        return out.reshape(np.shape(r)) if np.shape(r) else float(out[0])


def bracket_scalar(p: Puncture, r: float) -> float:
    """Scalar-math bracket term; the hot path of quadrature integrands."""
    if r >= p.cutoff:
        return 0.0
    x = (p.cutoff - r) / (p.cutoff / 2.0)
    if x >= 1.0:
        eta = 1.0
    else:
        a = math.exp(-1.0 / x)
        b = math.exp(-1.0 / (1.0 - x))
        eta = a / (a + b)
    prof = r ** (-2.0 * (1.0 - float(p.beta)))
    if p.log_power > 1:
        prof *= (-math.log(r / p.scale)) ** (p.log_power - 1)
    return eta * (prof - 1.0)


@dataclass(frozen=True)
class SingularDensity:
    """Background field times puncture brackets, with an asserted floor."""

    punctures: tuple[Puncture, ...] = ()
    background: object = "one"  # "one" | GridField | callable(x, y)
    floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "punctures", tuple(self.punctures))
        if not self.floor > 0.0:
            raise InvalidInputError("density floor must be positive")

    @property
    def epsilon_max(self) -> float:
        """Integrability margin: the profile lies in L^(1+eps) for eps below this."""
        if not self.punctures:
            return math.inf
        beta_min = min(float(p.beta) for p in self.punctures)
        if beta_min >= 1.0:
            return math.inf
        return beta_min / (1.0 - beta_min)

    def background_at(self, x, y):
        if self.background == "one":
            return np.ones_like(np.asarray(x, dtype=float))
        if isinstance(self.background, GridField):
            return interp_periodic(self.background, x, y)
        if callable(self.background):
            return np.asarray(self.background(x, y), dtype=float)
        raise InvalidInputError(f"unsupported background {self.background!r}")

    def bracket(self, x, y, period: float):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for p in self.punctures:
            r = toroidal_distance(x, y, p.pos[0], p.pos[1], period)
            out = out + p.bracket_term(r)
        return out

    def evaluate(self, x, y, period: float):
        """Pointwise density; infinite exactly at the punctures."""
        return self.background_at(x, y) * self.bracket(x, y, period)

    def snapped(self, dom: TorusDomain) -> "SingularDensity":
        """Same density with puncture positions snapped to cell centers."""
        punct = tuple(replace(p, pos=dom.snap(p.pos)) for p in self.punctures)
        return replace(self, punctures=punct)


def scalar_background(background) -> Callable[[float, float], float]:
    """Scalar evaluation closure for a background spec."""
    if background == "one":
        return lambda x, y: 1.0
    if isinstance(background, GridField):
        from .grids import scalar_interpolator

        return scalar_interpolator(background)
    if callable(background):
        return lambda x, y: float(background(x, y))
    raise InvalidInputError(f"unsupported background {background!r}")


def _validate_layout(cfg: SingularDensity, dom: TorusDomain) -> None:
    if not cfg.punctures:
        return
    max_r = max(p.cutoff for p in cfg.punctures)
    if max_r >= dom.period / 4.0:
        raise InvalidInputError("cutoff radii must stay below a quarter period")
    for i, p in enumerate(cfg.punctures):
        for q in cfg.punctures[i + 1:]:
            d = float(toroidal_distance(
                np.asarray(p.pos[0]), p.pos[1], q.pos[0], q.pos[1], dom.period))
            if d < 4.0 * max_r:
                raise InvalidInputError("punctures closer than four cutoff radii")


def _ray_box_interval(dx: float, dy: float, lo, hi) -> tuple[float, float]:
    """Clip the ray t*(dx,dy), t >= 0 against the box [lo1,hi1]x[lo2,hi2]."""
    t0, t1 = 0.0, math.inf
    for d, a, b in ((dx, lo[0], hi[0]), (dy, lo[1], hi[1])):
        if abs(d) < 1e-300:
            if a > 0.0 or b < 0.0:
                return (0.0, 0.0)
            continue
        ta, tb = a / d, b / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
    return (t0, max(t0, t1))


def _cell_average_polar(f: Callable[[float, float], float], offset: tuple[float, float],
                        h: float, epsrel: float) -> float:
    """Mean of f over the square cell centered at ``offset`` from the origin.

    Integration runs in polar coordinates about the origin, which absorbs
    an integrable singularity there; f takes Cartesian coordinates.
    """
    ox, oy = offset
    lo = (ox - h / 2.0, oy - h / 2.0)
    hi = (ox + h / 2.0, oy + h / 2.0)

    def radial(theta: float) -> float:
        ct, st = math.cos(theta), math.sin(theta)
        r0, r1 = _ray_box_interval(ct, st, lo, hi)
        if r1 <= r0:
            return 0.0
        val, _ = quad(lambda r: f(r * ct, r * st) * r, r0, r1,
                      epsabs=0.0, epsrel=epsrel, limit=100)
        return val

    if abs(ox) < 1e-15 and abs(oy) < 1e-15:
        # Origin cell: four smooth quadrants of the square boundary.
        pieces = [(-math.pi / 4 + k * math.pi / 2, math.pi / 4 + k * math.pi / 2)
                  for k in range(4)]
    else:
        center_angle = math.atan2(oy, ox)
        corners = [(lo[0], lo[1]), (lo[0], hi[1]), (hi[0], lo[1]), (hi[0], hi[1])]
        rel = [math.atan2(cy, cx) - center_angle for cx, cy in corners]
        rel = [math.atan2(math.sin(a), math.cos(a)) for a in rel]
        pieces = [(center_angle + min(rel), center_angle + max(rel))]

    total = 0.0
    for a, b in pieces:
        val, _ = quad(radial, a, b, epsabs=0.0, epsrel=epsrel, limit=100)
        total += val
    return total / h ** 2


def build_density(cfg: SingularDensity, dom: TorusDomain) -> GridField:
    """Realize the density on the grid.

    Cells farther than 3h from every puncture take the center value; cells
    within 3h (including the puncture cell itself, where the profile is
    integrable) take their polar-quadrature cell average at relative
    tolerance 1e-6.  Puncture positions are snapped to cell centers first.
    """
    cfg = cfg.snapped(dom)
    _validate_layout(cfg, dom)
    x, y = dom.meshgrid()
    values = np.asarray(cfg.evaluate(x, y, dom.period), dtype=float)

    h = dom.h
    period = dom.period
    bgf = scalar_background(cfg.background)
    for p in cfg.punctures:
        px, py = p.pos
        r = toroidal_distance(x, y, px, py, period)
        near = np.argwhere(r <= 3.0 * h + 1e-12)

        def f(ux: float, uy: float) -> float:
            # Cartesian offsets from the puncture; other punctures are far.
            return bgf(px + ux, py + uy) * (1.0 + bracket_scalar(p, math.hypot(ux, uy)))

        for i, j in near:
            ox = float(toroidal_delta(np.asarray(i * h), px, period))
            oy = float(toroidal_delta(np.asarray(j * h), py, period))
            values[i, j] = _cell_average_polar(f, (ox, oy), h, epsrel=1e-6)

    if not np.all(values > 0.0):
        raise InvalidInputError("density is not positive on the grid")
    far_mask = np.ones_like(values, dtype=bool)
    for p in cfg.punctures:
        far_mask &= toroidal_distance(x, y, p.pos[0], p.pos[1], period) > p.cutoff
    if np.any(values[far_mask] < cfg.floor):
        raise InvalidInputError("density drops below the declared floor away from punctures")
    return GridField(values, dom)


def parse_punctures(docs: Sequence[dict]) -> tuple[Puncture, ...]:
    """Punctures from JSON records {"pos", "beta", "N", "cutoff", "scale"}."""
    out = []
    for rec in docs:
        try:
            out.append(Puncture(
                pos=(float(rec["pos"][0]), float(rec["pos"][1])),
                beta=Fraction(str(rec["beta"])),
                log_power=int(rec.get("N", 1)),
                cutoff=float(rec.get("cutoff", 0.08)),
                scale=float(rec.get("scale", 0.32)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed puncture record: {exc}") from exc
    return tuple(out)
