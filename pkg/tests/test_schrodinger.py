"""Crank-Nicolson evolution, imaginary-time ground states and analytic packets."""
from __future__ import annotations

import math

import numpy as np
import pytest

from stochqm.fields import ComplexField, Grid
from stochqm.schrodinger import (
    CrankNicolson,
    PhysicalParams,
    Potential,
    analytic_gaussian_packet,
    eigenstates_bruteforce,
    energy,
    gaussian_width_squared,
    ground_state_imaginary_time,
    harmonic_two_level,
    step_crank_nicolson,
)
from stochqm.stats import moments

UNIT = PhysicalParams.from_hbar(1.0, 1.0)


def _evolve(psi, U, p, dt, steps):
    cn = CrankNicolson(psi.grid, U, p, dt)
    for _ in range(steps):
        psi = cn.step(psi)
    return psi


def test_params_identity():
    a = PhysicalParams.from_D(1.0, 0.5)
    b = PhysicalParams.from_hbar(1.0, 1.0)
    assert a == b
    for m, D in [(0.3, 0.17), (2.5, 1e-3), (7.0, 3.3)]:
        p = PhysicalParams.from_D(m, D)
        q = PhysicalParams.from_hbar(m, 2 * m * D)
        assert p.hbar == 2 * p.m * p.D
        assert q.hbar == 2 * q.m * q.D
        assert p.hbar == q.hbar and p.m == q.m
    with pytest.raises(ValueError):
        PhysicalParams(1.0, 0.5, 2.0)


def test_dt_zero_is_identity():
    g = Grid.line(-5, 5, 64)
    psi = analytic_gaussian_packet(0.0, 1.0, 1.0, 0.0, UNIT, g)
    out = step_crank_nicolson(psi, Potential.free(), UNIT, 0.0)
    assert np.array_equal(out.values, psi.values)


def test_free_packet_matches_analytic():
    g = Grid.line(-10, 10, 2048)
    psi = analytic_gaussian_packet(0.0, 0.0, 1.0, 0.0, UNIT, g)
    out = _evolve(psi, Potential.free(), UNIT, 1e-3, 100)
    ref = analytic_gaussian_packet(0.0, 0.0, 1.0, 0.1, UNIT, g)
    assert np.max(np.abs(out.values - ref.values)) < 1e-5


def test_moving_packet_2d_matches_analytic():
    g = Grid.square(-8, 8, 257)
    psi = analytic_gaussian_packet((0.5, -0.5), (1.0, 0.5), 1.0, 0.0, UNIT, g)
    out = _evolve(psi, Potential.free(), UNIT, 1e-3, 50)
    ref = analytic_gaussian_packet((0.5, -0.5), (1.0, 0.5), 1.0, 0.05, UNIT, g)
    assert np.max(np.abs(out.values - ref.values)) < 1e-3


def test_width_law():
    assert gaussian_width_squared(1.0, 2.0, UNIT) == pytest.approx(2.0, abs=1e-15)
    g = Grid.line(-12, 12, 1024)
    psi = analytic_gaussian_packet(0.0, 0.0, 1.0, 0.0, UNIT, g)
    _, var0 = moments(psi.density())
    assert var0[0] == pytest.approx(1.0, abs=1e-9)
    out = _evolve(psi, Potential.free(), UNIT, 2e-3, 1000)
    _, var = moments(out.density())
    assert var[0] == pytest.approx(2.0, rel=1e-3)


def test_packet_mean_moves_classically():
    g = Grid.line(-20, 20, 4096)
    for t in (0.0, 0.7, 2.0):
        psi = analytic_gaussian_packet(-1.0, 1.5, 1.0, t, UNIT, g)
        mean, _ = moments(psi.density())
        assert abs(mean[0] - (-1.0 + 1.5 * t)) < 1e-10


def test_norm_energy_reversal():
    g = Grid.line(-10, 10, 400)
    U = Potential.harmonic(1.0)
    psi = analytic_gaussian_packet(1.0, 0.5, 0.8, 0.0, UNIT, g).normalized()
    n0, e0 = psi.norm(), energy(psi, U, UNIT)
    out = _evolve(psi, U, UNIT, 1e-2, 1000)
    assert abs(out.norm() - n0) < 1e-9
    assert abs(energy(out, U, UNIT) - e0) / abs(e0) < 1e-6
    fwd = CrankNicolson(g, U, UNIT, 1e-2).step(psi)
    back = CrankNicolson(g, U, UNIT, -1e-2).step(fwd)
    assert np.max(np.abs(back.values - psi.values)) < 1e-10


def test_norm_energy_2d():
    g = Grid.square(-6, 6, 64)
    U = Potential.harmonic(1.0, (0.0, 0.0))
    psi = analytic_gaussian_packet((1.0, 0.0), (0.0, 1.0), 0.9, 0.0, UNIT, g).normalized()
    n0, e0 = psi.norm(), energy(psi, U, UNIT)
    # the split factorization conserves a nearby energy; the O(dt^2) offset is bounded
    out = _evolve(psi, U, UNIT, 5e-3, 1000)
    assert abs(out.norm() - n0) < 1e-9
    assert abs(energy(out, U, UNIT) - e0) / abs(e0) < 1e-6
    back = CrankNicolson(g, U, UNIT, -1e-2).step(CrankNicolson(g, U, UNIT, 1e-2).step(psi))
    assert np.max(np.abs(back.values - psi.values)) < 1e-10


def test_m_D_and_m_hbar_runs_identical():
    g = Grid.line(-8, 8, 256)
    U = Potential.harmonic(0.5)
    pa = PhysicalParams.from_D(1.3, 0.25)
    pb = PhysicalParams.from_hbar(1.3, 2 * 1.3 * 0.25)
    assert pa == pb
    psi = analytic_gaussian_packet(0.5, 0.0, 1.0, 0.0, pa, g)
    a = _evolve(psi, U, pa, 1e-2, 200)
    b = _evolve(psi, U, pb, 1e-2, 200)
    assert np.max(np.abs(a.values - b.values)) <= 1e-12


def test_harmonic_ground_state():
    g = Grid.line(-6, 6, 384)
    psi, E = ground_state_imaginary_time(Potential.harmonic(1.0), UNIT, g)
    assert abs(E - 0.5) < 1e-4
    _, var = moments(psi.density())
    assert abs(var[0] - 0.5) < 1e-3
    w, states = eigenstates_bruteforce(Potential.harmonic(1.0), UNIT, g, 1)
    assert abs(w[0] - E) < 1e-8
    assert np.max(np.abs(np.abs(states[0].values) - np.abs(psi.values))) < 1e-5


def test_ground_state_is_stationary():
    g = Grid.line(-6, 6, 256)
    U = Potential.harmonic(1.0)
    psi, _ = ground_state_imaginary_time(U, UNIT, g)
    out = _evolve(psi, U, UNIT, 5e-2, 200)
    assert np.max(np.abs(np.abs(out.values) - np.abs(psi.values))) < 1e-8


def test_free_box_mode():
    L = 10.0
    g = Grid.line(0, L, 200)
    w, states = eigenstates_bruteforce(Potential.free(), UNIT, g, 2)
    # Dirichlet walls one spacing beyond the outer nodes
    Leff = L + 2 * g.spacing[0]
    assert w[0] == pytest.approx((math.pi / Leff) ** 2 / 2, rel=1e-3)
    assert w[1] / w[0] == pytest.approx(4.0, rel=1e-3)
    psi, E = ground_state_imaginary_time(Potential.free(), UNIT, Grid.line(0, L, 64))
    w64, _ = eigenstates_bruteforce(Potential.free(), UNIT, Grid.line(0, L, 64), 1)
    assert E == pytest.approx(w64[0], rel=1e-8)


def test_potential_shift_shifts_energy():
    g = Grid.line(-6, 6, 128)
    U = Potential.harmonic(1.0)
    psi, E = ground_state_imaginary_time(U, UNIT, g)
    psi2, E2 = ground_state_imaginary_time(U.shifted(3.25), UNIT, g)
    assert E2 - E == pytest.approx(3.25, abs=1e-9)
    assert np.max(np.abs(psi.values - psi2.values)) < 1e-6


def test_two_level_density_rotates():
    g = Grid.square(-6, 6, 97)
    psi0 = harmonic_two_level(g, UNIT, 1.0, 0.0)
    rho0 = psi0.density().values
    # density zero sits at (-1, 0) at t = 0
    i, j = np.unravel_index(np.argmin(rho0 + (np.abs(g.mesh()[0]) > 3)), rho0.shape)
    assert (g.axes[0][i], g.axes[1][j]) == (-1.0, 0.0)
    # evolved numerically over a quarter period the zero has turned by pi/2
    U = Potential.harmonic(1.0, (0.0, 0.0))
    t = math.pi / 2
    num = _evolve(psi0, U, UNIT, t / 200, 200)
    ref = harmonic_two_level(g, UNIT, 1.0, t)
    overlap = abs(np.vdot(ref.values, num.values)) * g.cell_volume
    assert overlap > 0.999


def test_barrier_is_finite():
    U = Potential.barrier(5.0, 0.0, 1.0)
    g = Grid.line(-4, 4, 81)
    u = U.evaluate(g)
    assert np.isfinite(u).all()
    assert u.max() == 5.0 and u.min() == 0.0
