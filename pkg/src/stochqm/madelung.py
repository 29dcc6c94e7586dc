"""Hydrodynamic variables of a wave function and residuals of their field equations.

``psi = sqrt(rho) exp(i S / hbar)`` with hbar = 2 m D.  The mean velocity
carries an osmotic part ``D grad(rho)/rho`` on top of ``grad(S)/m``, and the
current is ``j = rho v - D grad(rho) = rho grad(S)/m``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GridMismatch, MultivaluedPhase
from .fields import (
    AXIS_NAMES,
    NODE_EPS_REL,
    ComplexField,
    ScalarField,
    VectorField,
    divergence,
    gradient,
    laplacian,
    unwrap_phase,
    winding_number,
    _fmt,
)
from .schrodinger import PhysicalParams, Potential

__all__ = [
    "MadelungFields",
    "NodalRegion",
    "NodalReport",
    "decompose",
    "from_density_phase",
    "mean_velocity",
    "probability_current",
    "quantum_potential",
    "quantum_potential_expanded",
    "continuity_residual",
    "hj_residual",
    "winding_number",
    "detect_nodal_regions",
    "align_gauge",
]

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class MadelungFields:
    rho: ScalarField
    S: ScalarField
    v: VectorField
    j: VectorField
    qpot: ScalarField
    t: float
    params: PhysicalParams
    rho_eps: float
    winding: int | None = None
    loop: list = field(default_factory=list, repr=False)

    @property
    def grid(self):
        return self.rho.grid

    @property
    def mask(self) -> np.ndarray:
        """Points where the density is above the node threshold."""
        return self.rho.values > self.rho_eps

    def to_csv(self) -> str:
        grid = self.grid
        cols = list(AXIS_NAMES[: grid.dim]) + ["rho", "S"]
        cols += [f"v{AXIS_NAMES[a]}" for a in range(grid.dim)]
        cols += [f"j{AXIS_NAMES[a]}" for a in range(grid.dim)] + ["qpot"]
        data = [c.ravel() for c in grid.mesh()]
        data += [self.rho.values.ravel(), self.S.values.ravel()]
        data += [c.ravel() for c in self.v.values] + [c.ravel() for c in self.j.values]
        data += [self.qpot.values.ravel()]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()


def _density_mask(rho: np.ndarray, eps_rel: float) -> float:
    return (eps_rel * math.sqrt(float(np.max(rho)))) ** 2


def _im_conj_grad(psi: ComplexField) -> np.ndarray:
    """``Im(conj(psi) grad psi)``, exactly zero for real psi whatever its sign changes."""
    re = gradient(ScalarField(psi.grid, psi.values.real)).values
    im = gradient(ScalarField(psi.grid, psi.values.imag)).values
    return psi.values.real * im - psi.values.imag * re


def probability_current(psi: ComplexField, p: PhysicalParams) -> VectorField:
    """``(hbar/m) Im(conj(psi) grad psi) = rho grad(S)/m``; well defined at nodes."""
    return VectorField(psi.grid, (p.hbar / p.m) * _im_conj_grad(psi))


def mean_velocity(psi: ComplexField, p: PhysicalParams, eps_rel: float = NODE_EPS_REL) -> VectorField:
    """``v = D grad(rho)/rho + grad(S)/m``; zero where rho is below the node threshold.

    The osmotic part is taken as ``D grad(ln rho)`` and the phase part as
    ``j / rho``, so no global unwrap is needed and a real psi carries no
    flow even across sign changes between grid points.
    """
    rho = np.abs(psi.values) ** 2
    keep = rho > _density_mask(rho, eps_rel)
    lnrho = np.log(np.where(rho > 0, rho, _TINY))
    osm = gradient(ScalarField(psi.grid, lnrho)).values * p.D
    safe = np.where(keep, rho, 1.0)
    cur = (p.hbar / p.m) * _im_conj_grad(psi) / safe
    return VectorField(psi.grid, np.where(keep, osm + cur, 0.0))


def quantum_potential(rho: ScalarField, p: PhysicalParams, keep: np.ndarray | None = None) -> ScalarField:
    """``-2 m D^2 lap(sqrt rho)/sqrt rho``, NaN outside ``keep``."""
    sq = np.sqrt(rho.values)
    lap = laplacian(ScalarField(rho.grid, sq)).values
    if keep is None:
        keep = rho.values > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = -2.0 * p.m * p.D**2 * lap / sq
    return ScalarField(rho.grid, np.where(keep, q, np.nan))


def quantum_potential_expanded(rho: ScalarField, p: PhysicalParams, keep: np.ndarray | None = None) -> ScalarField:
    """Same quantity as ``(m D^2 / 2) [(grad rho/rho)^2 - 2 lap(rho)/rho]``."""
    g = gradient(rho).values
    lap = laplacian(rho).values
    if keep is None:
        keep = rho.values > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = rho.values
        q = 0.5 * p.m * p.D**2 * (np.sum(g**2, axis=0) / r**2 - 2.0 * lap / r)
    return ScalarField(rho.grid, np.where(keep, q, np.nan))


def decompose(
    psi: ComplexField,
    p: PhysicalParams,
    t: float = 0.0,
    *,
    eps_rel: float = NODE_EPS_REL,
    strict: bool = True,
) -> MadelungFields:
    """Split psi into density, action, velocity, current and quantum potential.

    A winding phase raises :class:`MultivaluedPhase` unless ``strict`` is
    false, in which case S is the (path dependent) breadth-first unwrap and
    the winding is recorded on the result.
    """
    rho = psi.density()
    eps_amp = psi.node_threshold(eps_rel)
    winding, loop = None, []
    try:
        S = unwrap_phase(psi, p.hbar, eps_amp)
    except MultivaluedPhase as exc:
        if strict:
            raise
        winding, loop = exc.winding, exc.loop
        S = unwrap_phase(psi, p.hbar, eps_amp, check=False)
    rho_eps = eps_amp**2
    keep = rho.values > rho_eps
    return MadelungFields(
        rho=rho,
        S=S,
        v=mean_velocity(psi, p, eps_rel),
        j=probability_current(psi, p),
        qpot=quantum_potential(rho, p, keep),
        t=float(t),
        params=p,
        rho_eps=rho_eps,
        winding=winding,
        loop=loop,
    )


def from_density_phase(
    rho: ScalarField, S: ScalarField, p: PhysicalParams, t: float = 0.0, eps_rel: float = NODE_EPS_REL
) -> MadelungFields:
    """Build fields straight from (rho, S); works in the classical limit D = 0."""
    if rho.grid != S.grid:
        raise GridMismatch("rho and S must share a grid")
    rho_eps = _density_mask(rho.values, eps_rel)
    keep = rho.values > rho_eps
    gS = gradient(S).values
    lnrho = np.log(np.where(rho.values > 0, rho.values, _TINY))
    v = p.D * gradient(ScalarField(rho.grid, lnrho)).values + gS / p.m
    return MadelungFields(
        rho=rho,
        S=S,
        v=VectorField(rho.grid, np.where(keep, v, 0.0)),
        j=VectorField(rho.grid, rho.values * gS / p.m),
        qpot=quantum_potential(rho, p, keep),
        t=float(t),
        params=p,
        rho_eps=rho_eps,
    )


def align_gauge(S: ScalarField, reference: ScalarField, hbar: float) -> ScalarField:
    """Shift S by the multiple of 2 pi hbar that brings it closest to ``reference``."""
    if hbar == 0:
        return S
    diff = reference.values - S.values
    diff = diff[np.isfinite(diff)]
    if diff.size == 0:
        return S
    k = np.rint(np.median(diff) / (2 * np.pi * hbar))
    if k == 0:
        return S
    return ScalarField(S.grid, S.values + 2 * np.pi * hbar * k)


def continuity_residual(before: MadelungFields, after: MadelungFields) -> ScalarField:
    """``d(rho)/dt + div(rho grad S)/m`` at the midpoint of two snapshots.

    NaN where the action is undefined (nodes and unreachable points).
    """
    if before.grid != after.grid:
        raise GridMismatch("snapshots live on different grids")
    dt = after.t - before.t
    if not dt > 0:
        raise ValueError("snapshots must be in increasing time order")
    p = before.params
    S_after = align_gauge(after.S, before.S, p.hbar)
    rho_mid = 0.5 * (before.rho.values + after.rho.values)
    S_mid = ScalarField(before.grid, 0.5 * (before.S.values + S_after.values))
    flux = VectorField(before.grid, rho_mid * gradient(S_mid).values)
    r = (after.rho.values - before.rho.values) / dt + divergence(flux).values / p.m
    return ScalarField(before.grid, r)


def _hj_base(S_mid: ScalarField, S_before: ScalarField, S_after: ScalarField, u: np.ndarray, m: float, dt: float) -> np.ndarray:
    """``(grad S)^2/2m + U + dS/dt``, shared with the classical residual."""
    g = gradient(S_mid).values
    return np.sum(g**2, axis=0) / (2.0 * m) + u + (S_after.values - S_before.values) / dt


def hj_residual(
    fields: MadelungFields,
    before_S: ScalarField,
    after_S: ScalarField,
    U: Potential,
    p: PhysicalParams,
    dt: float,
    *,
    rho_eps: float | None = None,
) -> ScalarField:
    """``(grad S)^2/2m + U + dS/dt - 2 m D^2 lap(sqrt rho)/sqrt rho``.

    ``before_S`` and ``after_S`` are the actions ``dt`` apart with ``fields``
    taken at their midpoint; the time derivative is their centered
    difference.  Points with density at or below ``rho_eps`` (default: the
    node threshold of ``fields``) come back as NaN.
    """
    grid = fields.grid
    if before_S.grid != grid or after_S.grid != grid:
        raise GridMismatch("action snapshots live on a different grid")
    before_S = align_gauge(before_S, fields.S, p.hbar)
    after_S = align_gauge(after_S, fields.S, p.hbar)
    base = _hj_base(fields.S, before_S, after_S, U.evaluate(grid), p.m, dt)
    rho_eps = fields.rho_eps if rho_eps is None else rho_eps
    keep = fields.rho.values > rho_eps
    q = quantum_potential(fields.rho, p, keep).values
    return ScalarField(grid, np.where(keep, base + q, np.nan))


# ---------------------------------------------------------------------------
# nodal diagnostics


@dataclass(frozen=True)
class NodalRegion:
    points: list[tuple[int, ...]]
    rho_max: float
    speed_min: float
    speed_max: float
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "rho_max": self.rho_max,
            "speed_min": self.speed_min,
            "speed_max": self.speed_max,
            "flagged": self.flagged,
        }


@dataclass(frozen=True)
class NodalReport:
    """Connected low-density regions; ``flagged`` ones carry flow through the node."""

    regions: list[NodalRegion]
    speed_threshold: float

    @property
    def flagged(self) -> list[NodalRegion]:
        return [r for r in self.regions if r.flagged]

    @property
    def count(self) -> int:
        return len(self.flagged)

    def to_ndjson(self) -> str:
        lines = []
        for r in self.regions:
            rec = {"finding": "nodal_region", "unphysical": r.flagged, "speed_threshold": self.speed_threshold}
            rec.update(r.to_dict())
            lines.append(json.dumps(rec))
        return "".join(line + "\n" for line in lines)


def default_speed_threshold(fields: MadelungFields) -> float:
    """Ten times the smallest velocity the box resolves, hbar / (m L)."""
    p = fields.params
    length = min(hi - lo for lo, hi in fields.grid.extents)
    return 10.0 * p.hbar / (p.m * length)


def detect_nodal_regions(
    fields: MadelungFields, eps: float, speed_threshold: float | None = None
) -> NodalReport:
    """Interior connected components of ``{rho < eps}`` with their current speeds.

    The speed is ``|j| / max(rho, eps)``; a region is flagged when its
    largest speed exceeds the threshold, i.e. density vanishes while the
    flow does not.
    """
    if speed_threshold is None:
        speed_threshold = default_speed_threshold(fields)
    rho = fields.rho.values
    low = rho < eps
    speed = fields.j.magnitude().values / np.maximum(rho, eps)
    labels, count = ndimage.label(low)
    # components touching the edge are the decaying tails, not nodes
    edge = np.zeros_like(low)
    for ax in range(low.ndim):
        sl = [slice(None)] * low.ndim
        sl[ax] = [0, -1]
        edge[tuple(sl)] = True
    tails = set(np.unique(labels[edge & low]).tolist())
    regions = []
    for k in range(1, count + 1):
        if k in tails:
            continue
        sel = labels == k
        pts = np.argwhere(sel)
        smax = float(np.max(speed[sel]))
        regions.append(
            NodalRegion(
                points=[tuple(int(i) for i in p) for p in pts],
                rho_max=float(np.max(rho[sel])),
                speed_min=float(np.min(speed[sel])),
                speed_max=smax,
                flagged=smax > speed_threshold,
            )
        )
    return NodalReport(regions, float(speed_threshold))
