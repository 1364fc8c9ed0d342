"""Periodic grid scaffolding: torus domain, scalar fields, 5-point stencil."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError


@dataclass(frozen=True)
class TorusDomain:
    """Flat square torus discretized by n x n cells centered at (i*h, j*h)."""

    n: int
    period: float = 1.0

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 16 or self.n % 2 != 0:
            raise InvalidInputError("grid resolution must be an even integer >= 16")
        if not self.period > 0.0:
            raise InvalidInputError("period must be positive")

    @property
    def h(self) -> float:
        return self.period / self.n

    def centers(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.centers()
        return np.meshgrid(c, c, indexing="ij")

    def snap(self, pos: tuple[float, float]) -> tuple[float, float]:
        """Nearest cell center (positions wrap around the period)."""
        i = round(pos[0] / self.h) % self.n
        j = round(pos[1] / self.h) % self.n
        return (i * self.h, j * self.h)


class GridField:
    """Scalar field sampled at cell centers with periodic indexing."""

    __slots__ = ("values", "dom")

    def __init__(self, values: np.ndarray, dom: TorusDomain):
        values = np.asarray(values, dtype=float)
        if values.shape != (dom.n, dom.n):
            raise InvalidInputError(f"field shape {values.shape} does not match grid {dom.n}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("field entries must be finite")
        self.values = values
        self.dom = dom

    @classmethod
    def constant(cls, dom: TorusDomain, value: float) -> "GridField":
        return cls(np.full((dom.n, dom.n), float(value)), dom)

    @classmethod
    def from_function(cls, dom: TorusDomain, f: Callable) -> "GridField":
        x, y = dom.meshgrid()
        return cls(np.asarray(f(x, y), dtype=float), dom)

    def copy(self) -> "GridField":
        return GridField(self.values.copy(), self.dom)

    @property
    def h(self) -> float:
        return self.dom.h

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self.values).sum() * self.h ** 2)

    def __repr__(self):
        return f"GridField(n={self.dom.n}, min={self.values.min():.3g}, max={self.values.max():.3g})"


def laplacian(field: GridField) -> GridField:
    """5-point periodic Laplacian."""
    v = field.values
    lap = (
        np.roll(v, 1, axis=0) + np.roll(v, -1, axis=0)
        + np.roll(v, 1, axis=1) + np.roll(v, -1, axis=1)
        - 4.0 * v
    ) / field.h ** 2
    return GridField(lap, field.dom)


_LAPLACIAN_CACHE: dict[tuple[int, float], sp.csr_matrix] = {}


def laplacian_matrix(dom: TorusDomain) -> sp.csr_matrix:
    """Sparse 5-point periodic Laplacian on the flattened (row-major) grid."""
    key = (dom.n, dom.period)
    cached = _LAPLACIAN_CACHE.get(key)
    if cached is not None:
        return cached
    n = dom.n
    ones = np.ones(n)
    shift = sp.diags([ones[:-1], ones[:-1], [1.0], [1.0]], [1, -1, n - 1, -(n - 1)],
                     shape=(n, n), format="csr")
    eye = sp.identity(n, format="csr")
    lap = (sp.kron(shift, eye) + sp.kron(eye, shift)
           - 4.0 * sp.identity(n * n)) / dom.h ** 2
    lap = lap.tocsr()
    _LAPLACIAN_CACHE[key] = lap
    return lap


def toroidal_delta(a: np.ndarray, b: float, period: float) -> np.ndarray:
    """Signed minimal-image difference a - b on the circle of given period."""
    d = (np.asarray(a) - b) % period
    return np.where(d > period / 2.0, d - period, d)


def toroidal_distance(x, y, px: float, py: float, period: float):
    dx = toroidal_delta(x, px, period)
    dy = toroidal_delta(y, py, period)
    return np.hypot(dx, dy)


def scalar_interpolator(field: GridField):
    """Pure-scalar periodic bilinear interpolation closure (quadrature hot path)."""
    import math

    v = field.values
    n = field.dom.n
    h = field.h

    def at(x: float, y: float) -> float:
        xi = x / h
        yi = y / h
        i0 = math.floor(xi)
        j0 = math.floor(yi)
        fx = xi - i0
        fy = yi - j0
        i0 %= n
        j0 %= n
        i1 = (i0 + 1) % n
        j1 = (j0 + 1) % n
        return (v[i0, j0] * (1 - fx) * (1 - fy) + v[i1, j0] * fx * (1 - fy)
                + v[i0, j1] * (1 - fx) * fy + v[i1, j1] * fx * fy)

    return at


def interp_periodic(field: GridField, x, y):
    """Bilinear interpolation with periodic wrap; accepts scalars or arrays."""
    h = field.h
    n = field.dom.n
    v = field.values
    xi = np.asarray(x, dtype=float) / h
    yi = np.asarray(y, dtype=float) / h
    i0 = np.floor(xi).astype(int)
    j0 = np.floor(yi).astype(int)
    fx = xi - i0
    fy = yi - j0
    i0 %= n
    j0 %= n
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    out = (
        v[i0, j0] * (1 - fx) * (1 - fy)
        + v[i1, j0] * fx * (1 - fy)
        + v[i0, j1] * (1 - fx) * fy
        + v[i1, j1] * fx * fy
    )
    return out if out.ndim else float(out)
