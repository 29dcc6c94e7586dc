"""Particle ensembles driven by drift plus white-noise displacement.

Each step moves every particle by ``v(x, t) dt`` plus an independent
Gaussian displacement of per-axis variance ``2 D dt``.  With ``v`` the mean
velocity of a wave function, the ensemble density tracks ``|psi|^2``.

Randomness is counter based: the draws for step ``k`` of particle block
``b`` come from a Philox generator keyed by ``(seed, stream, k, b)``.  Blocks
have a fixed size, so results do not depend on how many threads run them.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import NotNormalized, ParticleEscapedGrid
from .fields import Grid, ScalarField, VectorField, gradient
from .madelung import MadelungFields
from .schrodinger import PhysicalParams
from .stats import fit_linear

BLOCK = 1 << 16
STREAMS = {"init": 0, "step": 1, "com": 2}


def substream(seed: int, name: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    t: float
    seed: int
    steps_taken: int = 0
    escaped: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] < 1:
            raise ValueError("ensemble needs at least one particle")
        if not np.all(np.isfinite(pos)):
            raise ValueError("particle positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class KineticEnergyReport:
    """Local mean kinetic energy without the unspecified constant offset (taken as 0)."""

    T_field: ScalarField
    T_mean: float
    T0_convention: float = 0.0


# ---------------------------------------------------------------------------
# sampling


def _jitter(idx: np.ndarray, axis: np.ndarray, h: float, lo: float, hi: float, u: np.ndarray) -> np.ndarray:
    return np.clip(axis[idx] + (u - 0.5) * h, lo, hi)


def sample_initial(rho: ScalarField, n: int, seed: int) -> ParticleEnsemble:
    """Draw ``n`` positions from a gridded density by inverse CDF plus in-cell jitter.

    Cells are centered on grid nodes; 2D draws pick x from the marginal and
    then y from the conditional row.
    """
    grid = rho.grid
    vals = rho.values
    if np.any(vals < 0) or abs(rho.integrate() - 1.0) > 1e-6:
        raise NotNormalized(f"density integrates to {rho.integrate():.12g}, expected 1")
    rng = substream(seed, "init")
    axes = grid.axes
    if grid.dim == 1:
        cdf = np.cumsum(vals)
        cdf /= cdf[-1]
        idx = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), grid.n[0] - 1)
        (lo, hi), h = grid.extents[0], grid.spacing[0]
        x = _jitter(idx, axes[0], h, lo, hi, rng.random(n))
        return ParticleEnsemble(x[:, None], 0.0, seed)
    marg = vals.sum(axis=1)
    cdf = np.cumsum(marg)
    cdf /= cdf[-1]
    ix = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), grid.n[0] - 1)
    rows = np.cumsum(vals, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = rows / rows[:, -1:]
    u2 = rng.random(n)
    iy = np.empty(n, dtype=int)
    for start in range(0, n, BLOCK):
        sl = slice(start, start + BLOCK)
        iy[sl] = np.sum(rows[ix[sl]] <= u2[sl, None], axis=1)
    iy = np.minimum(iy, grid.n[1] - 1)
    jx, jy = rng.random(n), rng.random(n)
    x = _jitter(ix, axes[0], grid.spacing[0], *grid.extents[0], jx)
    y = _jitter(iy, axes[1], grid.spacing[1], *grid.extents[1], jy)
    return ParticleEnsemble(np.stack([x, y], axis=1), 0.0, seed)


# ---------------------------------------------------------------------------
# stepping


def interpolate(field_: VectorField, positions: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a vector field at (n, dim) positions.

    Written as ``f0 + w (f1 - f0)`` so that constant fields come back exactly.
    """
    grid = field_.grid
    base, frac = [], []
    for a in range(grid.dim):
        lo, _ = grid.extents[a]
        s = (positions[:, a] - lo) / grid.spacing[a]
        i = np.clip(np.floor(s).astype(int), 0, grid.n[a] - 2)
        base.append(i)
        frac.append(np.clip(s - i, 0.0, 1.0))
    out = np.empty_like(positions)
    for c in range(grid.dim):
        f = field_.values[c]
        if grid.dim == 1:
            f0, f1 = f[base[0]], f[base[0] + 1]
            out[:, c] = f0 + frac[0] * (f1 - f0)
        else:
            i, j = base
            wx, wy = frac
            f00, f10 = f[i, j], f[i + 1, j]
            f01, f11 = f[i, j + 1], f[i + 1, j + 1]
            a0 = f00 + wx * (f10 - f00)
            a1 = f01 + wx * (f11 - f01)
            out[:, c] = a0 + wy * (a1 - a0)
    return out


def _noise(seed: int, step: int, n: int, dim: int, threads: int) -> np.ndarray:
    blocks = [(b, min(BLOCK, n - b * BLOCK)) for b in range(math.ceil(n / BLOCK))]

    def draw(block):
        b, size = block
        return substream(seed, "step", step, b).standard_normal((size, dim))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(draw, blocks))
    else:
        parts = [draw(b) for b in blocks]
    return np.concatenate(parts)


def step_ensemble(
    e: ParticleEnsemble, drift: VectorField, D: float, dt: float, *, threads: int = 1
) -> ParticleEnsemble:
    """One drift-diffusion step.  Escapees are clamped to the grid and counted."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = interpolate(drift, e.positions)
    noise = _noise(e.seed, e.steps_taken, e.n, e.dim, threads)
    new = e.positions + v * dt + math.sqrt(2.0 * D * dt) * noise
    lo = np.array([a for a, _ in drift.grid.extents])
    hi = np.array([b for _, b in drift.grid.extents])
    out = np.any((new < lo) | (new > hi), axis=1)
    n_out = int(np.count_nonzero(out))
    if n_out:
        new = np.clip(new, lo, hi)
        warnings.warn(f"{n_out} particles left the grid and were clamped", ParticleEscapedGrid, stacklevel=2)
    return replace(e, positions=new, t=e.t + dt, steps_taken=e.steps_taken + 1, escaped=e.escaped + n_out)


# ---------------------------------------------------------------------------
# estimators


def _bin_edges(grid: Grid, a: int) -> np.ndarray:
    ax = grid.axes[a]
    h = grid.spacing[a]
    return np.concatenate([ax - 0.5 * h, [ax[-1] + 0.5 * h]])


def estimate_density(e: ParticleEnsemble, grid: Grid, bandwidth: int = 0) -> ScalarField:
    """Histogram on node-centered cells, normalized to unit integral.

    ``bandwidth`` > 0 smooths with a triangular kernel spanning that many
    cells either side.
    """
    edges = [_bin_edges(grid, a) for a in range(grid.dim)]
    counts, _ = np.histogramdd(e.positions, bins=edges)
    counts = counts.astype(float)
    if bandwidth > 0:
        k = np.arange(-bandwidth, bandwidth + 1)
        w = (bandwidth + 1 - np.abs(k)).astype(float)
        w /= w.sum()
        for a in range(grid.dim):
            counts = ndimage.convolve1d(counts, w, axis=a, mode="constant")
    total = counts.sum()
    if total == 0:
        raise ValueError("no particles inside the grid")
    return ScalarField(grid, counts / (total * grid.cell_volume))


def kinetic_energy_estimate(fields: MadelungFields, p: PhysicalParams) -> KineticEnergyReport:
    """Local kinetic energy ``(m/2)(v^2 - 2 D v . grad(rho)/rho)``, offset excluded."""
    rho = fields.rho.values
    keep = fields.mask
    lnrho = np.log(np.where(rho > 0, rho, np.finfo(float).tiny))
    dlog = gradient(ScalarField(fields.grid, lnrho)).values
    v = fields.v.values
    T = 0.5 * p.m * (np.sum(v * v, axis=0) - 2.0 * p.D * np.sum(v * dlog, axis=0))
    T = np.where(keep, T, np.nan)
    T_mean = float(np.nansum(rho * T) * fields.grid.cell_volume)
    return KineticEnergyReport(ScalarField(fields.grid, T), T_mean)


# ---------------------------------------------------------------------------
# center-of-mass diffusion


@dataclass(frozen=True)
class ComDiffusionResult:
    D_com_fit: float
    stderr: float
    n: int
    ensembles: int
    seed: int
    D: float
    dt: float
    steps: int
    lags: list[int] = field(default_factory=list)
    msd: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "D_com_fit": self.D_com_fit,
            "stderr": self.stderr,
            "n": self.n,
            "ensembles": self.ensembles,
            "seed": self.seed,
            "D": self.D,
            "D_over_n": self.D / self.n,
        }


def com_diffusion_experiment(
    n_particles: int,
    D: float,
    steps: int,
    dt: float,
    ensembles: int,
    seed: int,
    *,
    dim: int = 1,
    max_lag: int = 10,
) -> ComDiffusionResult:
    """Diffusion constant of the center of mass of independent free particles.

    Each of ``ensembles`` systems holds ``n_particles`` diffusing with ``D``.
    The mean squared COM displacement over lag ``L dt``, averaged over
    systems, time origins and axes, is fit to ``2 D_com L dt``.  The standard
    error comes from the spread of the same fit across systems.
    """
    if ensembles < 2 or steps <= max_lag or n_particles < 1:
        raise ValueError("need ensembles >= 2, steps > max_lag and at least one particle")
    rng = substream(seed, "com")
    scale = math.sqrt(2.0 * D * dt)
    com = np.zeros((steps + 1, ensembles, dim))
    for k in range(steps):
        inc = rng.standard_normal((ensembles, n_particles, dim)) * scale
        com[k + 1] = com[k] + inc.mean(axis=1)
    lags = np.arange(1, max_lag + 1)
    # per-system MSD curves, averaged over origins and axes
    per_system = np.array([np.mean((com[L:] - com[:-L]) ** 2, axis=(0, 2)) for L in lags])
    msd = per_system.mean(axis=1)
    fit = fit_linear(lags * dt, msd)
    slopes = np.array([fit_linear(lags * dt, per_system[:, s]).slope for s in range(ensembles)])
    stderr = float(np.std(slopes, ddof=1) / math.sqrt(ensembles) / 2.0)
    return ComDiffusionResult(
        D_com_fit=fit.slope / 2.0,
        stderr=stderr,
        n=n_particles,
        ensembles=ensembles,
        seed=seed,
        D=D,
        dt=dt,
        steps=steps,
        lags=lags.tolist(),
        msd=msd.tolist(),
    )
