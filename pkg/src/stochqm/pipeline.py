"""Scenario orchestration: evolve psi, drive the ensemble with its mean velocity, compare.

Everything a run writes is a deterministic function of the config and the
seed; wall-clock timing only goes to the log.
"""
from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fields as F
from .config import ScenarioConfig
from .ensemble import (
    ParticleEnsemble,
    estimate_density,
    interpolate,
    kinetic_energy_estimate,
    sample_initial,
    step_ensemble,
)
from .errors import ParticleEscapedGrid, StochQMError
from .madelung import continuity_residual, decompose, detect_nodal_regions, hj_residual, mean_velocity
from .schrodinger import (
    CrankNicolson,
    PhysicalParams,
    Potential,
    analytic_gaussian_packet,
    eigenstates_bruteforce,
    ground_state_imaginary_time,
    harmonic_two_level,
    vortex_state,
)
from .stats import compare

log = logging.getLogger("stochqm")

BORDER_DENSITY_LIMIT = 1e-10
NODAL_EPS_REL = 1e-2

PLOT_SCRIPT = '''"""Plot 1D snapshot densities written by a stochqm run (generated placeholder)."""
import csv
import glob
import os

import matplotlib.pyplot as plt


def load(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["x"]) for r in rows], [float(r["value"]) for r in rows], "y" in rows[0]


here = os.path.dirname(os.path.abspath(__file__))
for path in sorted(glob.glob(os.path.join(here, "empirical_*.csv"))):
    tag = os.path.basename(path)[len("empirical_"):-4]
    x, emp, two_d = load(path)
    if two_d:
        continue
    _, ref, _ = load(os.path.join(here, "reference_" + tag + ".csv"))
    plt.plot(x, emp, ".", ms=2, label="ensemble step " + tag)
    plt.plot(x, ref, "-", lw=1)
plt.xlabel("x")
plt.ylabel("density")
plt.legend(fontsize=6)
plt.savefig(os.path.join(here, "densities.png"), dpi=150)
'''


def initial_state(cfg: ScenarioConfig, grid: F.Grid, p: PhysicalParams, U: Potential) -> F.ComplexField:
    init = cfg.initial
    if init.kind == "gaussian":
        return analytic_gaussian_packet(init.x0, init.p0, init.sigma0, 0.0, p, grid).normalized()
    if init.kind == "ground_state":
        return ground_state_imaginary_time(U, p, grid)[0]
    if init.kind == "excited":
        return eigenstates_bruteforce(U, p, grid, 2)[1][1]
    if init.kind == "vortex":
        return vortex_state(grid, init.charge, init.width, (tuple(init.x0) + (0.0, 0.0))[:2])
    if init.kind == "superposition":
        return harmonic_two_level(grid, p, cfg.potential.k, 0.0)
    f = F.read_field(init.path, dt=grid.dt)
    if not isinstance(f, F.ComplexField) or f.grid.shape != grid.shape:
        raise ValueError(f"{init.path} does not hold a complex field on the configured grid")
    return F.ComplexField(grid, f.values).normalized()


def write_checkpoint(path: Path, psi: F.ComplexField, p: PhysicalParams, U: Potential, t: float) -> None:
    meta = {"params": p.to_dict(), "t": t, "potential": U.to_dict()}
    path.write_text(F.field_to_ndjson(psi, meta))


def read_checkpoint(path: str | Path):
    """Return ``(psi, params, potential, t)``; plain field files get unit defaults."""
    path = Path(path)
    if path.suffix == ".csv":
        psi = F.field_from_csv(path.read_text())
        meta = {}
    else:
        psi, meta = F.field_from_ndjson(path.read_text())
    if not isinstance(psi, F.ComplexField):
        raise ValueError(f"{path} does not hold a complex field")
    pd = meta.get("params", {"m": 1.0, "D": 0.5, "hbar": 1.0})
    p = PhysicalParams(pd["m"], pd["D"], pd["hbar"])
    U = Potential.from_dict(meta.get("potential", {"kind": "free"}))
    return psi, p, U, float(meta.get("t", 0.0))


def diagnose(psi: F.ComplexField, p: PhysicalParams, t: float = 0.0, eps_rel: float = NODAL_EPS_REL) -> list[dict]:
    """Winding and nodal findings for one wave function."""
    fields_ = decompose(psi, p, t, strict=False)
    findings = [
        {
            "finding": "winding",
            "t": t,
            "winding": 0 if fields_.winding is None else fields_.winding,
            "multivalued_phase": fields_.winding is not None,
            "loop": [list(q) for q in fields_.loop],
        }
    ]
    eps = eps_rel * float(np.max(fields_.rho.values))
    report = detect_nodal_regions(fields_, eps)
    for region in report.regions:
        rec = {"finding": "nodal_region", "t": t, "unphysical": region.flagged, "speed_threshold": report.speed_threshold}
        rec.update(region.to_dict())
        findings.append(rec)
    return findings


@dataclass
class RunReport:
    name: str
    mode: str
    status: str = "ok"
    steps: int = 0
    outputs: list[str] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    escaped: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode,
            "status": self.status,
            "steps": self.steps,
            "escaped": self.escaped,
            "outputs": self.outputs,
            "snapshots": self.snapshots,
            "warnings": self.warnings,
        }


def _max_abs(a: np.ndarray) -> float | None:
    a = a[np.isfinite(a)]
    return float(np.max(np.abs(a))) if a.size else None


class _Writer:
    def __init__(self, out: Path | None, formats, report: RunReport):
        self.out, self.formats, self.report = out, set(formats), report
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, text: str) -> None:
        if self.out is None:
            return
        (self.out / name).write_text(text)
        self.report.outputs.append(name)

    def field(self, stem: str, f, meta=None) -> None:
        if "ndjson" in self.formats:
            self.text(stem + ".ndjson", F.field_to_ndjson(f, meta))
        if "csv" in self.formats:
            self.text(stem + ".csv", F.field_to_csv(f))


def run_scenario(
    cfg: ScenarioConfig,
    *,
    mode: str = "ensemble",
    out_dir: str | Path | None = None,
    seed: int | None = None,
    checkpoint_every: int = 0,
    threads: int | None = None,
    write: bool = True,
) -> RunReport:
    """Run one scenario.  ``mode`` is ``ensemble`` (full pipeline) or ``solve`` (psi only)."""
    grid = cfg.grid.build()
    p = cfg.physics.build()
    U = cfg.potential.build()
    seed = cfg.ensemble.seed if seed is None else int(seed)
    threads = cfg.ensemble.threads if threads is None else threads
    report = RunReport(cfg.name, mode)
    out = Path(out_dir if out_dir is not None else cfg.outputs.directory) if write else None
    w = _Writer(out, cfg.outputs.formats, report)
    w.text("config.json", cfg.to_json() + "\n")

    psi = initial_state(cfg, grid, p, U)
    stepper = CrankNicolson(grid, U, p, grid.dt)
    steps = cfg.steps()
    snaps = set(cfg.snapshot_steps())
    use_ensemble = mode == "ensemble"
    ens: ParticleEnsemble | None = None
    if use_ensemble:
        ens = sample_initial(psi.density(), cfg.ensemble.n, seed)
    traj_lines: list[str] = []
    n_traj = min(cfg.outputs.trajectories, ens.n) if ens is not None else 0

    def record_traj(k: int):
        if n_traj and k % cfg.outputs.trajectory_every == 0:
            for i in range(n_traj):
                xs = ", ".join(f'"{F.AXIS_NAMES[a]}": {F._fmt(ens.positions[i, a])}' for a in range(grid.dim))
                traj_lines.append(f'{{"t": {F._fmt(k * grid.dt)}, "particle_id": {i}, {xs}}}')

    border_warned = False
    prev_psi = None
    next_psi = stepper.step(psi)
    t_start = time.perf_counter()
    record_traj(0)
    for k in range(steps + 1):
        t = k * grid.dt
        if not border_warned and _border_density(psi) > BORDER_DENSITY_LIMIT:
            msg = f"|psi|^2 at the grid border exceeds {BORDER_DENSITY_LIMIT:g} at t={t:.6g}; enlarge the grid"
            log.warning(msg)
            report.warnings.append(msg)
            border_warned = True
        if k in snaps:
            report.snapshots.append(_snapshot(w, k, t, psi, prev_psi, next_psi, p, U, grid, ens, cfg.ensemble.bandwidth))
        if checkpoint_every and k % checkpoint_every == 0 and out is not None:
            name = f"checkpoint_{k:08d}.ndjson"
            write_checkpoint(out / name, psi, p, U, t)
            report.outputs.append(name)
        if k == steps:
            break
        if ens is not None:
            v = mean_velocity(psi, p)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ParticleEscapedGrid)
                ens = step_ensemble(ens, v, p.D, grid.dt, threads=threads)
            record_traj(k + 1)
        prev_psi, psi = psi, next_psi
        next_psi = stepper.step(psi)
    log.info("%s: %d steps in %.2fs", cfg.name, steps, time.perf_counter() - t_start)
    report.steps = steps
    if ens is not None:
        report.escaped = ens.escaped
        if ens.escaped:
            msg = f"{ens.escaped} particle steps left the grid and were clamped"
            log.warning(msg)
            report.warnings.append(msg)
        if traj_lines:
            w.text("trajectories.ndjson", "\n".join(traj_lines) + "\n")
    w.text("plot_snapshots.py", PLOT_SCRIPT)
    w.text("report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report


def _particle_mean(f: F.ScalarField, ens: ParticleEnsemble) -> float:
    vals = np.repeat(np.nan_to_num(f.values, nan=0.0)[None], f.grid.dim, axis=0)
    return float(np.mean(interpolate(F.VectorField(f.grid, vals), ens.positions)[:, 0]))


def _border_density(psi: F.ComplexField) -> float:
    rho = np.abs(psi.values) ** 2
    edges = [np.moveaxis(rho, a, 0)[[0, -1]] for a in range(rho.ndim)]
    return float(max(np.max(e) for e in edges))


def _snapshot(w: _Writer, k, t, psi, prev_psi, next_psi, p, U, grid, ens, bandwidth=0) -> dict:
    tag = f"{k:08d}"
    rec: dict = {"step": k, "t": t, "norm": psi.norm()}
    w.field(f"psi_{tag}", psi, {"t": t, "params": p.to_dict(), "potential": U.to_dict()})
    fld = decompose(psi, p, t, strict=False)
    rec["winding"] = 0 if fld.winding is None else fld.winding
    w.text(f"madelung_{tag}.csv", fld.to_csv())
    T = kinetic_energy_estimate(fld, p)
    rec["T_mean"] = T.T_mean
    if prev_psi is not None and fld.winding is None:
        try:
            before = decompose(prev_psi, p, t - grid.dt)
            after = decompose(next_psi, p, t + grid.dt)
            rec["continuity_residual_max"] = _max_abs(continuity_residual(before, fld).values[fld.mask])
            rec["hj_residual_max"] = _max_abs(hj_residual(fld, before.S, after.S, U, p, 2 * grid.dt).values)
        except StochQMError as exc:  # residuals are diagnostics; keep the run going
            rec["residual_error"] = str(exc)
    findings = diagnose(psi, p, t)
    w.text(f"findings_{tag}.ndjson", "".join(json.dumps(f, sort_keys=True) + "\n" for f in findings))
    rec["nodal_flagged"] = sum(1 for f in findings if f.get("unphysical"))
    if ens is not None:
        ref = psi.density()
        emp = estimate_density(ens, grid, bandwidth)
        cmp_ = compare(emp, ref, ens.n)
        w.text(f"compare_{tag}.json", cmp_.to_json() + "\n")
        w.text(f"empirical_{tag}.csv", F.field_to_csv(emp))
        w.text(f"reference_{tag}.csv", F.field_to_csv(ref))
        rec.update(
            kl=cmp_.kl,
            w1=cmp_.w1,
            ensemble_variance=np.var(ens.positions, axis=0).tolist(),
            ensemble_mean=np.mean(ens.positions, axis=0).tolist(),
            escaped=ens.escaped,
            T_mean_ensemble=_particle_mean(T.T_field, ens),
        )
    return rec
