"""Discrete metric geometry of singular conformal densities.

A conformal density rho turns the torus into a length space with metric
2 rho (dx^2 + dy^2); curves are measured by the integral of sqrt(2 rho).
The graph realization uses grid cells as nodes (8- or 16-neighbor stencil,
edge weights by midpoint rule away from punctures and adaptive quadrature
near them) plus one completion node per puncture whose ring edges carry the
radial integral of sqrt(2 rho).  All distances are Dijkstra shortest paths,
so graph distances always overestimate the continuum length metric, never
undershoot it.

Chart balls (background distance, the flat chart metric of the torus) are
used for ball diameters and forbidden regions, matching how neighborhoods
of the critical values are specified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.csgraph import connected_components, dijkstra

from .density import Puncture, bracket_scalar
from .errors import InvalidInputError, SeparationError
from .grids import (GridField, TorusDomain, interp_periodic, scalar_interpolator,
                    toroidal_distance)

STENCILS = {
    8: ((1, 0), (0, 1), (1, 1), (1, -1)),
    16: ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)),
}

#: Worst-case overestimation factor of each stencil on a flat metric
#: (1 / cos of half the largest angular gap between move directions).
STENCIL_FACTOR = {8: 1.0 / math.cos(math.pi / 8), 16: 1.0 / math.cos(math.radians(13.2825))}


@dataclass(frozen=True)
class ConformalDensity:
    """Positive base field times puncture profile brackets."""

    base: GridField
    punctures: tuple[Puncture, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "punctures", tuple(self.punctures))
        if not np.all(self.base.values > 0.0):
            raise InvalidInputError("conformal base field must be positive")
        for p in self.punctures:
            if not float(p.beta) > 0.0:
                raise InvalidInputError("puncture beta must be positive")

    @property
    def dom(self) -> TorusDomain:
        return self.base.dom

    def evaluate(self, x, y):
        period = self.dom.period
        out = interp_periodic(self.base, x, y)
        for p in self.punctures:
            r = toroidal_distance(np.asarray(x, dtype=float), y, p.pos[0], p.pos[1], period)
            out = out * (1.0 + p.bracket_term(r))
        return out

    def speed(self, x, y):
        """sqrt(2 rho): the line-element factor for curve length."""
        return np.sqrt(2.0 * self.evaluate(x, y))

    def scalar_speed(self):
        """Scalar-math closure for sqrt(2 rho), used inside quadratures."""
        base_at = scalar_interpolator(self.base)
        period = self.dom.period
        punct = self.punctures

        def at(x: float, y: float) -> float:
            rho = base_at(x, y)
            for p in punct:
                dx = (x - p.pos[0]) % period
                if dx > period / 2.0:
                    dx -= period
                dy = (y - p.pos[1]) % period
                if dy > period / 2.0:
                    dy -= period
                rho *= 1.0 + bracket_scalar(p, math.hypot(dx, dy))
            return math.sqrt(2.0 * rho)

        return at


@dataclass
class MetricGraph:
    dom: TorusDomain
    stencil: int
    graph: sp.csr_matrix
    positions: np.ndarray
    node_index: np.ndarray
    puncture_nodes: tuple[int, ...]
    punctures: tuple[Puncture, ...]

    @property
    def num_nodes(self) -> int:
        return self.graph.shape[0]

    def node(self, spec) -> int:
        """Resolve a node spec: int id, (i, j) cell, or 'p<k>' completion node."""
        if isinstance(spec, (int, np.integer)):
            if not 0 <= spec < self.num_nodes:
                raise InvalidInputError(f"node id {spec} out of range")
            return int(spec)
        if isinstance(spec, str):
            s = spec.strip()
            if s.startswith("p"):
                k = int(s[1:])
                if not 0 <= k < len(self.puncture_nodes):
                    raise InvalidInputError(f"no completion node {spec!r}")
                return self.puncture_nodes[k]
            if ":" in s:
                i, j = s.split(":")
                return self.node((int(i), int(j)))
            raise InvalidInputError(f"cannot parse node spec {spec!r}")
        i, j = spec
        idx = self.node_index[int(i) % self.dom.n, int(j) % self.dom.n]
        if idx < 0:
            raise InvalidInputError(
                f"cell {spec} is a puncture cell; address its completion node instead")
        return int(idx)


def _edge_offsets(stencil: int):
    if stencil not in STENCILS:
        raise InvalidInputError("stencil must be 8 or 16")
    return STENCILS[stencil]


def build_metric_graph(rho: ConformalDensity, stencil: int = 8) -> MetricGraph:
    """Weighted graph realizing the conformal length metric.

    Edge weights: sqrt(2 rho(midpoint)) times segment length, upgraded to
    adaptive quadrature along the segment when an endpoint lies within 4h
    of a puncture.  Each puncture contributes a completion node joined to
    the 8 cells around its (removed) host cell by radial integrals from
    radius zero, which converge because beta > 0.
    """
    dom = rho.dom
    n, h, period = dom.n, dom.h, dom.period
    punct = tuple(
        Puncture(dom.snap(p.pos), p.beta, p.log_power, p.cutoff, p.scale)
        for p in rho.punctures
    )
    rho = ConformalDensity(rho.base, punct)

    removed = np.zeros((n, n), dtype=bool)
    for p in punct:
        removed[round(p.pos[0] / h) % n, round(p.pos[1] / h) % n] = True
    node_index = -np.ones((n, n), dtype=np.int64)
    keep = ~removed
    node_index[keep] = np.arange(int(keep.sum()))
    num_cells = int(keep.sum())
    num_nodes = num_cells + len(punct)

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    positions = np.zeros((num_nodes, 2))
    positions[node_index[keep], 0] = ii[keep] * h
    positions[node_index[keep], 1] = jj[keep] * h
    puncture_ids = tuple(num_cells + k for k in range(len(punct)))
    for k, p in enumerate(punct):
        positions[num_cells + k] = p.pos

    def near_puncture(x, y, radius):
        out = np.zeros(np.shape(x), dtype=bool)
        for p in punct:
            out |= toroidal_distance(x, y, p.pos[0], p.pos[1], period) <= radius
        return out

    rows, cols, weights = [], [], []
    for di, dj in _edge_offsets(stencil):
        seg = math.hypot(di, dj) * h
        src = node_index
        dst = np.roll(np.roll(node_index, -di, axis=0), -dj, axis=1)
        ok = (src >= 0) & (dst >= 0)
        xm = (ii + di / 2.0) * h
        ym = (jj + dj / 2.0) * h
        w = rho.speed(xm, ym) * seg

        if punct:
            x0, y0 = ii * h, jj * h
            x1, y1 = (ii + di) * h, (jj + dj) * h
            flag = ok & (near_puncture(x0, y0, 4.0 * h) | near_puncture(x1, y1, 4.0 * h))
            speed_scalar = rho.scalar_speed()
            for i, j in np.argwhere(flag):
                ax, ay = i * h, j * h

                def speed_at(u, ax=ax, ay=ay):
                    return speed_scalar(ax + u * di * h, ay + u * dj * h)

                val, _ = quad(speed_at, 0.0, 1.0, epsabs=0.0, epsrel=1e-8, limit=100)
                w[i, j] = val * seg

        rows.append(src[ok])
        cols.append(dst[ok])
        weights.append(w[ok])

    speed_scalar = rho.scalar_speed()
    for k, p in enumerate(punct):
        pid = num_cells + k
        pi, pj = round(p.pos[0] / h) % n, round(p.pos[1] / h) % n
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                target = node_index[(pi + di) % n, (pj + dj) % n]
                if target < 0:
                    continue
                dist = math.hypot(di, dj) * h
                ux, uy = di * h / dist, dj * h / dist

                def radial(t, p=p, ux=ux, uy=uy):
                    return speed_scalar(p.pos[0] + t * ux, p.pos[1] + t * uy)

                val, _ = quad(radial, 0.0, dist, epsabs=0.0, epsrel=1e-8, limit=200)
                rows.append(np.array([pid]))
                cols.append(np.array([target]))
                weights.append(np.array([val]))

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = np.concatenate(weights)
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise InvalidInputError("edge weights must be finite and positive")
    graph = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([r, c]), np.concatenate([c, r]))),
        shape=(num_nodes, num_nodes),
    ).tocsr()

    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise InvalidInputError("metric graph is not connected")
    return MetricGraph(dom, stencil, graph, positions, node_index, puncture_ids, punct)


# ---------------------------------------------------------------------------
# Distances and diameters
# ---------------------------------------------------------------------------

def distances_from(g: MetricGraph, source) -> np.ndarray:
    return dijkstra(g.graph, directed=False, indices=g.node(source))


def distance(g: MetricGraph, a, b) -> float:
    return float(distances_from(g, a)[g.node(b)])


def distance_matrix(g: MetricGraph, nodes) -> np.ndarray:
    ids = np.array([g.node(s) for s in nodes], dtype=int)
    d = dijkstra(g.graph, directed=False, indices=ids)
    return d[:, ids]


@dataclass(frozen=True)
class DiameterResult:
    value: float
    exact: bool


def diameter(g: MetricGraph, exact_limit: int = 4096, sweeps: int = 4) -> DiameterResult:
    """Exact all-pairs diameter up to ``exact_limit`` nodes, else a sweep bound.

    The sweep bound is a lower bound on the true graph diameter and is
    flagged ``exact=False``.
    """
    if g.num_nodes <= exact_limit:
        d = dijkstra(g.graph, directed=False)
        return DiameterResult(float(d.max()), True)
    src = 0
    best = 0.0
    for _ in range(sweeps):
        d = dijkstra(g.graph, directed=False, indices=src)
        far = int(np.argmax(d))
        best = max(best, float(d[far]))
        src = far
    return DiameterResult(best, False)


def chart_ball_nodes(g: MetricGraph, center, delta: float) -> np.ndarray:
    """Node ids whose positions lie within chart distance delta of center."""
    cid = g.node(center)
    cx, cy = g.positions[cid]
    d = toroidal_distance(g.positions[:, 0], g.positions[:, 1], cx, cy, g.dom.period)
    return np.flatnonzero(d <= delta + 1e-12)


def ball_diameter(g: MetricGraph, center, delta: float) -> float:
    """Diameter (ambient graph metric) of the chart ball around center."""
    nodes = chart_ball_nodes(g, center, delta)
    if len(nodes) == 0:
        raise InvalidInputError("empty ball")
    if len(nodes) == 1:
        return 0.0
    d = dijkstra(g.graph, directed=False, indices=nodes)
    return float(d[:, nodes].max())


def constrained_distance(g: MetricGraph, a, b, forbidden) -> float:
    """Shortest-path distance avoiding the forbidden node set."""
    ia, ib = g.node(a), g.node(b)
    forb = {g.node(s) for s in forbidden}
    if ia in forb or ib in forb:
        raise InvalidInputError("endpoints must lie outside the forbidden set")
    if not forb:
        return float(dijkstra(g.graph, directed=False, indices=ia)[ib])
    keep = np.ones(g.num_nodes, dtype=bool)
    keep[list(forb)] = False
    remap = -np.ones(g.num_nodes, dtype=int)
    remap[keep] = np.arange(int(keep.sum()))
    sub = g.graph[keep][:, keep]
    d = dijkstra(sub, directed=False, indices=remap[ia])[remap[ib]]
    if not np.isfinite(d):
        raise SeparationError("forbidden set separates the endpoints")
    return float(d)


# ---------------------------------------------------------------------------
# Product spaces
# ---------------------------------------------------------------------------

@dataclass
class ProductSpace:
    """Ordered pair of metric graphs with the Pythagorean combined distance."""

    g1: MetricGraph
    g2: MetricGraph


def product_distance(p: ProductSpace, a: tuple, b: tuple) -> float:
    """d((a1,a2),(b1,b2)) = hypot(d1(a1,b1), d2(a2,b2))."""
    return math.hypot(distance(p.g1, a[0], b[0]), distance(p.g2, a[1], b[1]))


@dataclass(frozen=True)
class ProductExcess:
    unconstrained: float
    constrained: float

    @property
    def excess(self) -> float:
        return self.constrained - self.unconstrained


def product_curve_excess(p: ProductSpace, a: tuple, b: tuple,
                         forbidden1, forbidden2) -> ProductExcess:
    """Length excess of product paths confined outside both forbidden balls.

    For the product length metric the optimal confined path runs both
    factor-constrained geodesics simultaneously, so the constrained product
    distance is exactly hypot of the factor-constrained distances.
    """
    d1 = distance(p.g1, a[0], b[0])
    d2 = distance(p.g2, a[1], b[1])
    c1 = constrained_distance(p.g1, a[0], b[0], forbidden1)
    c2 = constrained_distance(p.g2, a[1], b[1], forbidden2)
    return ProductExcess(math.hypot(d1, d2), math.hypot(c1, c2))


def _approach_sequence(g: MetricGraph, puncture_index: int, direction: tuple,
                       radii_cells) -> list[int]:
    p = g.punctures[puncture_index]
    h = g.dom.h
    n = g.dom.n
    pi, pj = round(p.pos[0] / h) % n, round(p.pos[1] / h) % n
    nodes = []
    for k in radii_cells:
        nodes.append(g.node(((pi + k * direction[0]) % n, (pj + k * direction[1]) % n)))
    return nodes


def sequence_independence_check(p: ProductSpace, case: int,
                                targets=((0, 0), (8, 8), (0, 0)),
                                radii_cells=(4, 3, 2),
                                directions=((1, 0), (0, -1))) -> float:
    """Deviation of the completed product distance between approach sequences.

    Cases follow the completion rules of the product construction: 3 -- one
    factor approaches its puncture with the other coordinate pinned; 4 --
    only the second factor approaches; 5 -- both approach.  ``targets`` is
    (s in g1, r in g1, s' in g2).  Returns the maximum absolute difference
    between the two directional approach sequences at matched radii; it is
    controlled by twice the grid-scale ball diameters.
    """
    if case not in (3, 4, 5):
        raise InvalidInputError("case must be 3, 4, or 5")
    s1, r1, s2 = targets
    dir_a, dir_b = directions

    def seq(g, direction):
        return _approach_sequence(g, 0, direction, radii_cells)

    vals = []
    for direction in (dir_a, dir_b):
        row = []
        if case == 3:
            for node in seq(p.g1, direction):
                row.append(distance(p.g1, node, s1))
        elif case == 4:
            d_first = distance(p.g1, s1, r1)
            for node in seq(p.g2, direction):
                row.append(math.hypot(d_first, distance(p.g2, node, s2)))
        else:
            for n1, n2 in zip(seq(p.g1, direction), seq(p.g2, direction)):
                row.append(math.hypot(distance(p.g1, n1, s1), distance(p.g2, n2, s2)))
        vals.append(row)
    return float(max(abs(x - y) for x, y in zip(*vals)))


# ---------------------------------------------------------------------------
# Volume comparison
# ---------------------------------------------------------------------------

def bishop_gromov_radius(volume_ratio: float, d1: float, n: int) -> float:
    """Largest R with int_0^{R+d1} sinh^{2n-1} / int_0^R sinh^{2n-1} >= ratio.

    The comparison ratio decreases from +infinity at R -> 0 to
    exp((2n-1) d1) at R -> infinity; ratios at or below that limit admit no
    bound and return +inf.  Solved by bisection on adaptive quadrature of
    the integrals.
    """
    if not volume_ratio > 1.0:
        raise InvalidInputError("volume ratio must exceed 1")
    if not d1 > 0.0:
        raise InvalidInputError("annulus width d1 must be positive")
    if not (isinstance(n, int) and n >= 1):
        raise InvalidInputError("dimension parameter n must be a positive integer")
    power = 2 * n - 1
    if volume_ratio <= math.exp(power * d1) * (1.0 + 1e-14):
        return math.inf

    def vol(r: float) -> float:
        val, _ = quad(lambda v: math.sinh(v) ** power, 0.0, r,
                      epsabs=0.0, epsrel=1e-13, limit=200)
        return val

    def ratio(r: float) -> float:
        lower = vol(r)
        if lower == 0.0:
            return math.inf
        return vol(r + d1) / lower

    lo = 1e-12
    while ratio(lo) < volume_ratio:
        lo *= 0.1
        if lo < 1e-250:
            raise InvalidInputError("volume ratio too large to bracket")
    # sinh overflows past ~700; ratios that survive to the cap sit too close
    # to the asymptotic limit to resolve in double precision.
    hi_cap = 600.0 / power
    hi = min(max(1.0, 2.0 * lo), hi_cap)
    while ratio(hi) >= volume_ratio:
        hi *= 2.0
        if hi > hi_cap:
            raise InvalidInputError(
                "volume ratio too close to its asymptotic limit to bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ratio(mid) >= volume_ratio:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, lo):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Epsilon-isometry distortion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonIsometryReport:
    """Maxima of the four distortion conditions plus a GH upper bound.

    eps1: distance distortion of the forward map on A-pairs.
    eps2: distance distortion of the section on B-pairs.
    eps3: displacement of the composite g(f(x)) in A.
    eps4: displacement of f(g(s)) in B (zero for an exact section).
    ``gh_upper`` is half the max distortion for identity correspondences and
    1.5 times the worst maximum otherwise; ``paper_scale`` records the
    constant 8 the four conditions are normalized by in the source argument.
    """

    eps1: float
    eps2: float
    eps3: float
    eps4: float
    identity: bool
    paper_scale: int = 8

    @property
    def eps_max(self) -> float:
        return max(self.eps1, self.eps2, self.eps3, self.eps4)

    @property
    def gh_upper(self) -> float:
        if self.identity:
            return self.eps_max / 2.0
        return 1.5 * self.eps_max


def epsilon_isometry_check(dA: np.ndarray, dB: np.ndarray,
                           f: np.ndarray, g: np.ndarray) -> EpsilonIsometryReport:
    """Evaluate the four distortion maxima for sampled metrics.

    ``dA`` and ``dB`` are symmetric distance matrices over the sampled node
    sets, ``f`` maps A-sample indices to B-sample indices and ``g`` is a
    right-inverse section (f[g] must be the identity, else the input is
    rejected).
    """
    dA = np.asarray(dA, dtype=float)
    dB = np.asarray(dB, dtype=float)
    f = np.asarray(f, dtype=int)
    g = np.asarray(g, dtype=int)
    ka, kb = dA.shape[0], dB.shape[0]
    if dA.shape != (ka, ka) or dB.shape != (kb, kb):
        raise InvalidInputError("distance matrices must be square")
    if f.shape != (ka,) or np.any(f < 0) or np.any(f >= kb):
        raise InvalidInputError("forward map must send A-samples to B-samples")
    if g.shape != (kb,) or np.any(g < 0) or np.any(g >= ka):
        raise InvalidInputError("section must send B-samples to A-samples")
    if not np.array_equal(f[g], np.arange(kb)):
        raise InvalidInputError("g is not a section of f (f(g(s)) != s)")

    eps1 = float(np.abs(dA - dB[np.ix_(f, f)]).max())
    eps2 = float(np.abs(dA[np.ix_(g, g)] - dB).max())
    eps3 = float(dA[np.arange(ka), g[f]].max())
    eps4 = float(dB[np.arange(kb), f[g]].max())
    identity = ka == kb and np.array_equal(f, np.arange(ka)) and np.array_equal(g, np.arange(kb))
    return EpsilonIsometryReport(eps1, eps2, eps3, eps4, identity)


def product_collapse_check(g1: MetricGraph, g2: MetricGraph,
                           samples1, samples2, base_index: int = 0) -> EpsilonIsometryReport:
    """Distortion of projecting a product space onto its first factor.

    The product sample set is the cartesian product of the factor samples;
    the section pins the second coordinate at ``samples2[base_index]``.
    """
    d1 = distance_matrix(g1, samples1)
    d2 = distance_matrix(g2, samples2)
    m1, m2 = d1.shape[0], d2.shape[0]
    dA = np.hypot(d1[:, None, :, None], d2[None, :, None, :]).reshape(m1 * m2, m1 * m2)
    f = np.repeat(np.arange(m1), m2)
    g = np.arange(m1) * m2 + base_index
    return epsilon_isometry_check(dA, d1, f, g)
