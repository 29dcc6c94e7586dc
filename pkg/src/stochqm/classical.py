"""The non-diffusive limit: Newtonian characteristics and the classical Hamilton-Jacobi residual."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GridMismatch, StepSizeTooLarge
from .fields import Grid, ScalarField
from .madelung import _hj_base
from .schrodinger import Potential

DRIFT_WARN = 1e-8
DRIFT_FAIL = 1e-6


@dataclass(frozen=True)
class CharacteristicBundle:
    """Trajectories sampled on a common time grid.

    ``x`` and ``p`` have shape (n_traj, n_times, dim); ``action`` holds the
    running integral of the Lagrangian along each trajectory.
    """

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    action: np.ndarray
    U: Potential
    m: float

    def energy(self) -> np.ndarray:
        return np.sum(self.p**2, axis=-1) / (2.0 * self.m) + self.U.value_at(self.x)

    def energy_drift(self) -> np.ndarray:
        """Max relative energy deviation per trajectory."""
        e = self.energy()
        scale = np.maximum(np.abs(e[:, :1]), 1e-12)
        return np.max(np.abs(e - e[:, :1]) / scale, axis=1)

    def caustics(self) -> list[tuple[int, int]]:
        """(time index, trajectory index) pairs where neighbouring 1D trajectories cross.

        Trajectories are ordered by initial position; a crossing flips the
        sign of the discrete Jacobian dx/dx0.
        """
        if self.x.shape[-1] != 1 or self.x.shape[0] < 2:
            return []
        order = np.argsort(self.x[:, 0, 0])
        xs = self.x[order, :, 0]
        jac = np.diff(xs, axis=0)
        sign0 = np.sign(jac[:, :1])
        hits = np.argwhere(np.sign(jac) * sign0 <= 0)
        return [(int(t), int(order[k])) for k, t in hits]


def _rk4_rhs(U: Potential, m: float, x, p):
    dx = p / m
    dp = U.force(x)
    dA = np.sum(p * p, axis=-1) / (2.0 * m) - U.value_at(x)
    return dx, dp, dA


def integrate_characteristics(
    U: Potential, initial, t_end: float, dt: float, m: float = 1.0
) -> CharacteristicBundle:
    """Classic fourth-order Runge-Kutta integration of Newton's equations.

    ``initial`` is a sequence of ``(x, p)`` pairs (scalars or d-vectors).
    Raises :class:`StepSizeTooLarge` when any trajectory's relative energy
    drift exceeds 1e-6.
    """
    x0 = np.array([np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in initial])
    p0 = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for _, p in initial])
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(p0))):
        raise ValueError("initial conditions must be finite")
    nsteps = int(math.ceil(t_end / dt - 1e-9))
    h = t_end / nsteps
    times = np.linspace(0.0, t_end, nsteps + 1)
    xs = np.empty((len(x0), nsteps + 1, x0.shape[1]))
    ps = np.empty_like(xs)
    acts = np.zeros((len(x0), nsteps + 1))
    x, p, a = x0.copy(), p0.copy(), np.zeros(len(x0))
    xs[:, 0], ps[:, 0] = x, p
    for k in range(nsteps):
        k1 = _rk4_rhs(U, m, x, p)
        k2 = _rk4_rhs(U, m, x + 0.5 * h * k1[0], p + 0.5 * h * k1[1])
        k3 = _rk4_rhs(U, m, x + 0.5 * h * k2[0], p + 0.5 * h * k2[1])
        k4 = _rk4_rhs(U, m, x + h * k3[0], p + h * k3[1])
        x = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        a = a + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        xs[:, k + 1], ps[:, k + 1], acts[:, k + 1] = x, p, a
    bundle = CharacteristicBundle(times, xs, ps, acts, U, float(m))
    drift = float(np.max(bundle.energy_drift()))
    if drift > DRIFT_FAIL:
        raise StepSizeTooLarge(f"relative energy drift {drift:.3g} exceeds {DRIFT_FAIL:g}")
    return bundle


def action_field(bundle: CharacteristicBundle, grid: Grid, time_index: int, initial_action=None) -> ScalarField:
    """S(x, t) on a 1D grid from the actions carried by the trajectories.

    ``S(x(t), t) = S0(x0) + integral L dt`` is interpolated with a cubic
    spline in the current positions; grid points outside the span of the
    trajectories are NaN.  Requires no caustic up to ``time_index``.
    """
    if grid.dim != 1 or bundle.x.shape[-1] != 1:
        raise ValueError("action fields are built on 1D grids")
    s0 = np.zeros(bundle.x.shape[0]) if initial_action is None else np.asarray(initial_action, float)
    xt = bundle.x[:, time_index, 0]
    st = s0 + bundle.action[:, time_index]
    order = np.argsort(xt)
    xt, st = xt[order], st[order]
    if np.any(np.diff(xt) <= 0):
        raise ValueError("trajectories have crossed; S is not single valued here")
    spline = CubicSpline(xt, st)
    gx = grid.axes[0]
    inside = (gx >= xt[0]) & (gx <= xt[-1])
    return ScalarField(grid, np.where(inside, spline(gx), np.nan))


def classical_hj_residual(S_before: ScalarField, S_after: ScalarField, U: Potential, m: float, dt: float) -> ScalarField:
    """``(grad S)^2/2m + U + dS/dt`` midway between two actions ``dt`` apart."""
    if S_before.grid != S_after.grid:
        raise GridMismatch("action snapshots live on different grids")
    grid = S_before.grid
    S_mid = ScalarField(grid, 0.5 * (S_before.values + S_after.values))
    return ScalarField(grid, _hj_base(S_mid, S_before, S_after, U.evaluate(grid), m, dt))
