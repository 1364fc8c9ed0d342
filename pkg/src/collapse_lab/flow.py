"""Base-reduced continuity method and parabolic flow on the torus.

Both families interpolate between an initial density rho0 and the reference
density lam while the potential phi evolves; as t grows either route lands
on the generalized Kahler-Einstein equation solved by :mod:`collapse_lab.gke`.
In scalar form, with a(t) = 1 - exp(-t) and w(phi, t) the evolving Kahler
density

    w(phi, t) = exp(-t) rho0 + a(t) lam + Lap_h phi / 2,

the continuity family solves  w(phi, t) = exp(phi / a(t)) F lam  per time,
and the parabolic flow integrates  d phi/dt = log(w / (F lam)) - phi  by
implicit Euler.  Every accepted state keeps w > 0 (discrete Kahler
condition).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, InvalidInputError, NumericalError
from .gke import solve_spd, _LINE_SEARCH_FLOOR
from .grids import GridField, TorusDomain, laplacian_matrix, toroidal_distance


def default_time_grid(t0: float = 0.1, t_end: float = 30.0, count: int = 16) -> np.ndarray:
    """Geometric time grid; the continuity exponent 1/a(t) blows up at t = 0."""
    if not 0.0 < t0 < t_end:
        raise InvalidInputError("need 0 < t0 < t_end")
    return np.geomspace(t0, t_end, count)


@dataclass
class FlowConfig:
    """Shared data for the continuity family and the parabolic flow."""

    F: GridField
    lam: float
    rho0: GridField
    times: np.ndarray = None
    newton_tol: float = 1e-11
    dt: float = 0.25

    def __post_init__(self):
        if self.times is None:
            self.times = default_time_grid()
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] <= 0.0 or np.any(np.diff(self.times) <= 0.0):
            raise InvalidInputError("time grid must be positive and increasing")
        if isinstance(self.rho0, (int, float)):
            self.rho0 = GridField.constant(self.F.dom, float(self.rho0))
        if self.rho0.dom != self.F.dom:
            raise InvalidInputError("rho0 grid does not match the density grid")
        if not np.all(self.rho0.values > 0.0):
            raise InvalidInputError("rho0 must be strictly positive")
        if not np.all(self.F.values > 0.0):
            raise InvalidInputError("F must be strictly positive")
        if not 0.0 < self.dt <= 0.25:
            raise InvalidInputError("parabolic step size must lie in (0, 0.25]")
        if not self.newton_tol > 0.0:
            raise InvalidInputError("Newton tolerance must be positive")

    @property
    def dom(self) -> TorusDomain:
        return self.F.dom


@dataclass
class FlowState:
    t: float
    phi: GridField
    residual: float

    def kahler_density(self, cfg: FlowConfig) -> GridField:
        lapm = laplacian_matrix(cfg.dom)
        w = _w_values(cfg, lapm, self.phi.values.ravel(), self.t)
        return GridField(w.reshape(cfg.dom.n, cfg.dom.n), cfg.dom)


def _w_values(cfg: FlowConfig, lapm: sp.csr_matrix, phi_flat: np.ndarray, t: float) -> np.ndarray:
    a = 1.0 - np.exp(-t)
    return (np.exp(-t) * cfg.rho0.values.ravel() + a * cfg.lam
            + 0.5 * (lapm @ phi_flat))


def continuity_residual(cfg: FlowConfig, phi: GridField, t: float) -> GridField:
    """w(phi, t) - exp(phi / a(t)) F lam on the grid."""
    lapm = laplacian_matrix(cfg.dom)
    a = 1.0 - np.exp(-t)
    w = _w_values(cfg, lapm, phi.values.ravel(), t)
    rhs = np.exp(phi.values.ravel() / a) * cfg.F.values.ravel() * cfg.lam
    return GridField((w - rhs).reshape(cfg.dom.n, cfg.dom.n), cfg.dom)


def continuity_solve(cfg: FlowConfig, t: float, phi0: GridField | None = None) -> FlowState:
    """Newton solve of the time-t continuity equation, warm-startable."""
    if t < cfg.times[0]:
        raise InvalidInputError("continuity time below the start of the family")
    dom = cfg.dom
    lapm = laplacian_matrix(dom)
    a = 1.0 - np.exp(-t)
    fv = cfg.F.values.ravel()
    v = np.zeros(dom.n * dom.n) if phi0 is None else phi0.values.ravel().copy()

    def residual(vec: np.ndarray) -> np.ndarray:
        return _w_values(cfg, lapm, vec, t) - np.exp(vec / a) * fv * cfg.lam

    r = residual(v)
    rnorm = float(np.abs(r).max())
    for _ in range(200):
        if rnorm <= cfg.newton_tol:
            break
        diag = np.exp(v / a) * fv * cfg.lam / a
        A = 0.5 * (-lapm) + sp.diags(diag)
        delta = solve_spd(A.tocsr(), r)
        alpha = 1.0
        while True:
            trial = v + alpha * delta
            rt = residual(trial)
            rtnorm = float(np.abs(rt).max())
            if rtnorm < rnorm:
                v, r, rnorm = trial, rt, rtnorm
                break
            alpha *= 0.5
            if alpha < _LINE_SEARCH_FLOOR:
                raise ConvergenceError("continuity line search stalled")
    else:
        raise ConvergenceError(f"continuity Newton did not converge at t={t}")

    if not np.all(_w_values(cfg, lapm, v, t) > 0.0):
        raise NumericalError("Kahler positivity lost at an accepted continuity state")
    return FlowState(t, GridField(v.reshape(dom.n, dom.n), dom), rnorm)


def run_continuity(cfg: FlowConfig) -> list[FlowState]:
    """Solve the family along the configured time grid with warm starts."""
    states = []
    phi = None
    for t in cfg.times:
        state = continuity_solve(cfg, float(t), phi0=phi)
        states.append(state)
        phi = state.phi
    return states


def krf_step(cfg: FlowConfig, state: FlowState, dt: float | None = None) -> FlowState:
    """One implicit-Euler step of d phi/dt = log(w / (F lam)) - phi.

    The inner Newton system is symmetrized by the positive weight w, giving
    ((1+dt) diag(w) + (dt/2)(-Lap)) delta = -w N(phi), which is SPD whenever
    the positivity invariant holds.  The line search rejects steps that lose
    positivity before they are ever accepted.
    """
    dt = cfg.dt if dt is None else dt
    if not 0.0 < dt <= 0.25:
        raise InvalidInputError("parabolic step size must lie in (0, 0.25]")
    dom = cfg.dom
    lapm = laplacian_matrix(dom)
    t_next = state.t + dt
    fv = cfg.F.values.ravel()
    phik = state.phi.values.ravel()
    v = phik.copy()

    def nres(vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = _w_values(cfg, lapm, vec, t_next)
        if not np.all(w > 0.0):
            return None, w
        return vec - phik - dt * (np.log(w / (fv * cfg.lam)) - vec), w

    r, w = nres(v)
    if r is None:
        raise NumericalError("positivity lost at the previous iterate; step too aggressive")
    rnorm = float(np.abs(r).max())
    for _ in range(100):
        if rnorm <= cfg.newton_tol:
            break
        A = sp.diags((1.0 + dt) * w) + (dt / 2.0) * (-lapm)
        delta = solve_spd(A.tocsr(), -(w * r))
        alpha = 1.0
        while True:
            trial = v + alpha * delta
            rt, wt = nres(trial)
            if rt is not None:
                rtnorm = float(np.abs(rt).max())
                if rtnorm < rnorm:
                    v, r, w, rnorm = trial, rt, wt, rtnorm
                    break
            alpha *= 0.5
            if alpha < _LINE_SEARCH_FLOOR:
                raise ConvergenceError("parabolic inner Newton stalled")
    else:
        raise ConvergenceError(f"parabolic inner Newton did not converge at t={t_next}")
    return FlowState(t_next, GridField(v.reshape(dom.n, dom.n), dom), rnorm)


def run_krf(cfg: FlowConfig, t_end: float | None = None, dt: float | None = None) -> list[FlowState]:
    """Integrate the parabolic flow from phi = 0 at t = 0."""
    dt = cfg.dt if dt is None else dt
    t_end = float(cfg.times[-1]) if t_end is None else float(t_end)
    state = FlowState(0.0, GridField.constant(cfg.dom, 0.0), 0.0)
    states = [state]
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9:
        raise InvalidInputError("t_end must be an integer multiple of dt")
    for _ in range(steps):
        state = krf_step(cfg, state, dt)
        states.append(state)
    return states


def restrict_mask(dom: TorusDomain, punctures, delta: float) -> np.ndarray:
    """Cells at chart distance >= delta from every puncture."""
    x, y = dom.meshgrid()
    mask = np.ones((dom.n, dom.n), dtype=bool)
    for p in punctures:
        mask &= toroidal_distance(x, y, p.pos[0], p.pos[1], dom.period) >= delta
    if not np.any(mask):
        raise InvalidInputError("the excluded neighborhoods cover the whole torus")
    return mask


def convergence_report(states: list[FlowState], psi: GridField, cfg: FlowConfig,
                       mode: str, punctures=(), delta: float | None = None) -> list[dict]:
    """Per-time diagnostics of the approach to the GKE potential.

    Columns: t, residual, l1_dist, sup_dist_kdelta, sup_phidot, and
    psi_gap_density -- the L1 gap between the flow density and exp(psi),
    using exp(phidot + phi) for the parabolic flow (backward-difference
    phidot) and exp(phi) for the continuity family.
    """
    if not states:
        raise InvalidInputError("empty trajectory")
    if mode not in ("continuity", "krf"):
        raise InvalidInputError("mode must be 'continuity' or 'krf'")
    dom = cfg.dom
    h2 = dom.h ** 2
    if delta is None and punctures:
        delta = 8.0 * max(p.cutoff for p in punctures)
    mask = restrict_mask(dom, punctures, delta) if punctures else np.ones(
        (dom.n, dom.n), dtype=bool)

    exp_psi = np.exp(psi.values)
    rows = []
    prev = None
    for st in states:
        diff = st.phi.values - psi.values
        phidot = None
        if prev is not None and st.t > prev.t:
            phidot = (st.phi.values - prev.phi.values) / (st.t - prev.t)
        if mode == "krf":
            dens = np.exp((phidot if phidot is not None else 0.0) + st.phi.values)
        else:
            dens = np.exp(st.phi.values)
        rows.append({
            "t": float(st.t),
            "residual": float(st.residual),
            "l1_dist": float(np.abs(diff).sum() * h2),
            "sup_dist_kdelta": float(np.abs(diff[mask]).max()),
            "sup_phidot": float(np.abs(phidot).max()) if phidot is not None else 0.0,
            "psi_gap_density": float(np.abs(dens - exp_psi).sum() * h2),
        })
        prev = st
    return rows
