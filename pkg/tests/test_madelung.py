"""Density/phase decomposition, residuals and nodal diagnostics."""
from __future__ import annotations

import math

import numpy as np
import pytest

from stochqm.errors import MultivaluedPhase
from stochqm.fields import ComplexField, Grid, ScalarField, gradient
from stochqm.madelung import (
    continuity_residual,
    decompose,
    detect_nodal_regions,
    from_density_phase,
    hj_residual,
    probability_current,
    quantum_potential,
    quantum_potential_expanded,
)
from stochqm.schrodinger import (
    CrankNicolson,
    PhysicalParams,
    Potential,
    analytic_gaussian_packet,
    eigenstates_bruteforce,
    ground_state_imaginary_time,
    harmonic_two_level,
    vortex_state,
)

UNIT = PhysicalParams.from_hbar(1.0, 1.0)


def test_real_gaussian_velocity_is_osmotic():
    g = Grid.line(-8, 8, 801)
    x = g.axes[0]
    sigma2 = 1.5
    psi = ComplexField(g, np.exp(-(x**2) / (4 * sigma2)).astype(complex)).normalized()
    f = decompose(psi, UNIT)
    keep = f.mask
    assert np.max(np.abs(f.v.values[0][keep] + UNIT.D * x[keep] / sigma2)) < 1e-4
    assert np.all(f.j.values == 0.0)


def test_current_of_moving_packet():
    # central differences lose (p0 h)^2/6 relative, so the grid is fine
    g = Grid.line(-10, 10, 20001)
    x = g.axes[0]
    p0 = 1.7
    rho = np.exp(-(x**2) / 2) / math.sqrt(2 * math.pi)
    psi = ComplexField(g, np.sqrt(rho) * np.exp(1j * p0 * x / UNIT.hbar))
    j = probability_current(psi, UNIT).values[0]
    assert np.max(np.abs(j - rho * p0 / UNIT.m)) < 1e-6


def test_global_phase_gauge():
    g = Grid.line(-8, 8, 256)
    p = PhysicalParams.from_D(2.0, 0.3)
    psi = analytic_gaussian_packet(0.5, 1.0, 1.0, 0.3, p, g)
    theta = 0.9
    a = decompose(psi, p)
    b = decompose(ComplexField(g, psi.values * np.exp(1j * theta)), p)
    assert np.allclose(a.rho.values, b.rho.values, rtol=1e-14, atol=0)
    assert np.allclose(a.v.values, b.v.values, atol=1e-12, rtol=0)
    assert np.allclose(a.j.values, b.j.values, atol=1e-12, rtol=0)
    d = (b.S.values - a.S.values)[a.mask]
    assert np.ptp(d) < 1e-10
    assert d[0] == pytest.approx(p.hbar * theta, abs=1e-10)


def test_current_identity():
    def err(n):
        g = Grid.line(-8, 8, n)
        psi = analytic_gaussian_packet(-0.5, 0.8, 1.0, 0.4, UNIT, g)
        f = decompose(psi, UNIT)
        drho = gradient(f.rho).values[0]
        gS = gradient(f.S).values[0]
        lhs = f.rho.values * f.v.values[0] - UNIT.D * drho
        rhs = f.rho.values * gS / UNIT.m
        keep = f.mask & np.isfinite(rhs)
        return np.max(np.abs(lhs - rhs)[keep])

    e1, e2 = err(512), err(1023)
    assert e1 < 1e-3
    assert 3.5 < e1 / e2 < 4.5


def test_quantum_potential_two_ways():
    def err(n):
        g = Grid.line(-6, 6, n)
        psi = analytic_gaussian_packet(0.0, 0.0, 1.0, 0.0, UNIT, g)
        rho = psi.density()
        keep = np.abs(g.axes[0]) < 4
        a = quantum_potential(rho, UNIT, keep).values
        b = quantum_potential_expanded(rho, UNIT, keep).values
        return np.nanmax(np.abs(a - b))

    e1, e2 = err(241), err(481)
    assert e2 < 5e-3
    assert 3.5 < e1 / e2 < 4.5


def test_quantum_potential_of_gaussian():
    # -hbar^2/2m lap(sqrt rho)/sqrt rho = hbar^2/(4 m s^2) (1 - x^2/(2 s^2)) for variance s^2
    g = Grid.line(-6, 6, 1201)
    x = g.axes[0]
    rho = ScalarField(g, np.exp(-(x**2) / 2) / math.sqrt(2 * math.pi))
    q = quantum_potential(rho, UNIT, np.abs(x) < 5).values
    exact = (1 - x**2 / 2) / 4
    assert np.nanmax(np.abs(q - exact)) < 1e-4


def test_hbar_substitution_is_exact():
    for m, D in [(1.0, 0.5), (0.7, 0.31), (3.0, 2.2)]:
        p = PhysicalParams.from_D(m, D)
        assert abs(2 * p.m * p.D**2 - p.hbar**2 / (2 * p.m)) <= 1e-15 * max(1.0, p.hbar**2 / p.m)


def test_reconstruction():
    g = Grid.square(-5, 5, 64)
    psi = analytic_gaussian_packet((0.3, -0.2), (1.0, -0.5), 1.0, 0.5, UNIT, g)
    f = decompose(psi, UNIT)
    keep = f.mask
    back = np.sqrt(f.rho.values) * np.exp(1j * np.nan_to_num(f.S.values) / UNIT.hbar)
    phase = back[keep][0] / psi.values[keep][0]
    phase /= abs(phase)
    assert np.max(np.abs(back[keep] - phase * psi.values[keep])) < 1e-10


def test_uniform_density_zero_residual():
    g = Grid.line(0, 1, 32)
    rho = ScalarField(g, np.ones(32))
    S = ScalarField(g, np.zeros(32))
    a = from_density_phase(rho, S, UNIT, 0.0)
    b = from_density_phase(rho, S, UNIT, 0.1)
    assert np.all(continuity_residual(a, b).values == 0.0)


def _ground(n=256):
    g = Grid.line(-6, 6, n, dt=1e-3)
    U = Potential.harmonic(1.0)
    psi, E = ground_state_imaginary_time(U, UNIT, g)
    return g, U, psi, E


def test_stationary_residuals():
    g, U, psi, E = _ground()
    dt = 1e-3
    cn = CrankNicolson(g, U, UNIT, dt)
    mid = cn.step(psi)
    after = cn.step(mid)
    fb, fm, fa = decompose(psi, UNIT, 0.0), decompose(mid, UNIT, dt), decompose(after, UNIT, 2 * dt)
    r = continuity_residual(fb, fa).values
    assert np.nanmax(np.abs(r[fm.mask])) < 1e-6
    h = hj_residual(fm, fb.S, fa.S, U, UNIT, 2 * dt).values
    assert np.nanmax(np.abs(h)) < 1e-5


def test_free_packet_hj_at_t0():
    g = Grid.line(-8, 8, 1601)
    U = Potential.free()
    d = 1e-4
    fields_ = [decompose(analytic_gaussian_packet(0.0, 0.0, 1.0, t, UNIT, g), UNIT, t) for t in (-d, 0.0, d)]
    h = hj_residual(fields_[1], fields_[0].S, fields_[2].S, U, UNIT, 2 * d).values
    keep = np.abs(g.axes[0]) < 5
    assert np.nanmax(np.abs(h[keep])) < 1e-4


def test_hj_reduces_to_classical_without_diffusion():
    from stochqm.classical import classical_hj_residual

    g = Grid.line(-3, 3, 61)
    x = g.axes[0]
    p = PhysicalParams.classical(1.0)
    dt = 0.01
    Sb = ScalarField(g, 0.4 * x - 0.08 * (-dt / 2))
    Sa = ScalarField(g, 0.4 * x - 0.08 * (dt / 2))
    rho = ScalarField(g, np.exp(-(x**2)))
    mid = from_density_phase(rho, ScalarField(g, 0.5 * (Sb.values + Sa.values)), p)
    a = hj_residual(mid, Sb, Sa, Potential.free(), p, dt).values
    b = classical_hj_residual(Sb, Sa, Potential.free(), 1.0, dt).values
    keep = np.isfinite(a)
    assert np.array_equal(a[keep], b[keep])


def test_vortex_strict_and_lenient():
    g = Grid.square(-4, 4, 65)
    psi = vortex_state(g)
    with pytest.raises(MultivaluedPhase):
        decompose(psi, UNIT)
    f = decompose(psi, UNIT, strict=False)
    assert f.winding == 1 and len(f.loop) > 0


def test_ground_state_has_no_nodes():
    g, _, psi, _ = _ground(128)
    f = decompose(psi, UNIT)
    assert detect_nodal_regions(f, 1e-2 * f.rho.values.max()).regions == []


def test_excited_node_found_not_flagged():
    g = Grid.line(-8, 8, 257)
    _, states = eigenstates_bruteforce(Potential.harmonic(1.0), UNIT, g, 2)
    f = decompose(states[1], UNIT)
    report = detect_nodal_regions(f, 1e-2 * f.rho.values.max())
    assert len(report.regions) == 1
    assert report.count == 0
    centre = [g.axes[0][pt[0]] for pt in report.regions[0].points]
    assert min(abs(c) for c in centre) < 1e-12


def test_two_level_node_flagged():
    g = Grid.square(-6, 6, 97)
    psi = harmonic_two_level(g, UNIT, 1.0, 0.0)
    f = decompose(psi, UNIT, strict=False)
    report = detect_nodal_regions(f, 1e-2 * f.rho.values.max())
    assert report.count == 1
    pts = report.flagged[0].points
    xs = {(g.axes[0][i], g.axes[1][j]) for i, j in pts}
    assert (-1.0, 0.0) in xs
    assert '"unphysical": true' in report.to_ndjson()
