"""Distribution comparisons and least-squares fits."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _sps

from .errors import DegenerateAbscissae, DimensionUnsupported, GridMismatch
from .fields import ScalarField

KL_FLOOR = 1e-12


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    stderr_slope: float


@dataclass(frozen=True)
class ComparisonReport:
    """Empirical-vs-reference comparison.  KL is ordered (empirical, reference)."""

    kl: float
    w1: float | None
    l2: float
    mean_delta: list[float]
    variance_delta: list[float]
    n_effective: int
    floored_cells: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _same_grid(p: ScalarField, q: ScalarField):
    if p.grid != q.grid:
        raise GridMismatch("densities live on different grids")


def kl_divergence_with_count(p: ScalarField, q: ScalarField, floor: float = KL_FLOOR) -> tuple[float, int]:
    _same_grid(p, q)
    pv, qv = p.values, q.values
    support = pv > 0
    # lift q toward the floor, but never above p: flooring must not invent negative terms
    qf = np.where(qv < floor, np.maximum(qv, np.minimum(pv, floor)), qv)
    floored = support & (qf != qv)
    terms = np.where(support, pv * np.log(np.where(support, pv, 1.0) / np.where(support, qf, 1.0)), 0.0)
    return float(np.sum(terms) * p.grid.cell_volume), int(np.count_nonzero(floored))


def kl_divergence(p: ScalarField, q: ScalarField) -> float:
    """``sum p ln(p/q) dV`` with q floored at 1e-12 where p has support."""
    return kl_divergence_with_count(p, q)[0]


def _cdf(f: ScalarField) -> np.ndarray:
    return np.cumsum(f.values) * f.grid.cell_volume


def wasserstein1_1d(p: ScalarField, q: ScalarField) -> float:
    """``integral |CDF_p - CDF_q| dx`` by the trapezoid rule."""
    _same_grid(p, q)
    if p.grid.dim != 1:
        raise DimensionUnsupported("W1 is implemented for 1D densities only")
    return float(np.trapezoid(np.abs(_cdf(p) - _cdf(q)), p.grid.axes[0]))


def l2_distance(p: ScalarField, q: ScalarField) -> float:
    _same_grid(p, q)
    return float(np.sqrt(np.sum((p.values - q.values) ** 2) * p.grid.cell_volume))


def moments(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis mean and variance of a density (normalized on the fly)."""
    w = f.values / np.sum(f.values)
    means, variances = [], []
    for x in f.grid.mesh():
        mu = float(np.sum(w * x))
        means.append(mu)
        variances.append(float(np.sum(w * (x - mu) ** 2)))
    return np.array(means), np.array(variances)


def compare(empirical: ScalarField, reference: ScalarField, n_effective: int = 0) -> ComparisonReport:
    kl, floored = kl_divergence_with_count(empirical, reference)
    w1 = wasserstein1_1d(empirical, reference) if empirical.grid.dim == 1 else None
    me, ve = moments(empirical)
    mr, vr = moments(reference)
    return ComparisonReport(
        kl=kl,
        w1=w1,
        l2=l2_distance(empirical, reference),
        mean_delta=(me - mr).tolist(),
        variance_delta=(ve - vr).tolist(),
        n_effective=int(n_effective),
        floored_cells=floored,
    )


def fit_linear(ts, ys) -> LinearFit:
    """Ordinary least squares ``y = slope * t + intercept`` with the slope's standard error."""
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if ts.size < 3 or ts.size != ys.size:
        raise DegenerateAbscissae("need at least 3 paired points")
    if np.ptp(ts) == 0:
        raise DegenerateAbscissae("abscissae are all equal")
    res = _sps.linregress(ts, ys)
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return LinearFit(float(res.slope), float(res.intercept), stderr)
