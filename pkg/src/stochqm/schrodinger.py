"""Reference wave evolution: Crank-Nicolson stepping, ground states, analytic packets.

The discrete Hamiltonian uses the three-point Laplacian with the wave
function vanishing just outside the grid, which keeps it Hermitian so that
each Crank-Nicolson step is exactly unitary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import LinearSolveFailure, NoConvergence
from .fields import ComplexField, Grid, ScalarField


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, diffusion constant and the action unit tied to them by hbar = 2 m D."""

    m: float
    D: float
    hbar: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not self.D > 0 and not (self.D == 0 and self.hbar == 0):
            raise ValueError("D must be positive (use PhysicalParams.classical for D = 0)")
        if abs(self.hbar - 2.0 * self.m * self.D) > 1e-12 * max(abs(self.hbar), 1e-300):
            raise ValueError(f"hbar={self.hbar!r} is not 2 m D = {2.0 * self.m * self.D!r}")

    @classmethod
    def classical(cls, m: float) -> PhysicalParams:
        """The non-diffusive limit D = hbar = 0; only valid for field relations."""
        return cls(float(m), 0.0, 0.0)

    @classmethod
    def from_D(cls, m: float, D: float) -> PhysicalParams:
        m, D = float(m), float(D)
        return cls(m, D, 2.0 * m * D)

    @classmethod
    def from_hbar(cls, m: float, hbar: float) -> PhysicalParams:
        m, hbar = float(m), float(hbar)
        D = hbar / (2.0 * m)
        # nudge by an ulp or two so that 2*m*D reproduces hbar bit for bit
        for cand in (D, *_ulp_neighbours(D)):
            if 2.0 * m * cand == hbar:
                D = cand
                break
        return cls(m, D, hbar)

    def to_dict(self) -> dict:
        return {"m": self.m, "D": self.D, "hbar": self.hbar}


def _ulp_neighbours(x: float, reach: int = 3):
    up = down = x
    for _ in range(reach):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        yield up
        yield down


@dataclass(frozen=True)
class Potential:
    """External potential U(x) in energy units.

    kinds: ``free``; ``harmonic`` (spring constant ``k``, optional ``center``);
    ``barrier`` (finite wall of ``height`` and ``width`` across axis 0 at
    ``center``); ``tabulated`` (values given on a grid).  Every kind accepts a
    constant ``offset``.
    """

    kind: str = "free"
    k: float = 1.0
    center: tuple[float, ...] = (0.0,)
    height: float = 0.0
    width: float = 1.0
    offset: float = 0.0
    table: ScalarField | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("free", "harmonic", "barrier", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "harmonic" and not self.k > 0:
            raise ValueError("harmonic spring constant must be positive")
        if self.kind == "barrier" and not (math.isfinite(self.height) and self.width > 0):
            raise ValueError("barrier needs a finite height and positive width")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated potential needs a table")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @classmethod
    def free(cls, offset: float = 0.0) -> Potential:
        return cls("free", offset=offset)

    @classmethod
    def harmonic(cls, k: float = 1.0, center=(0.0,), offset: float = 0.0) -> Potential:
        return cls("harmonic", k=k, center=tuple(np.atleast_1d(center)), offset=offset)

    @classmethod
    def barrier(cls, height: float, center: float = 0.0, width: float = 1.0, offset: float = 0.0) -> Potential:
        return cls("barrier", height=height, center=(center,), width=width, offset=offset)

    @classmethod
    def tabulated(cls, table: ScalarField, offset: float = 0.0) -> Potential:
        return cls("tabulated", table=table, offset=offset)

    def shifted(self, c: float) -> Potential:
        return Potential(self.kind, self.k, self.center, self.height, self.width, self.offset + c, self.table)

    def evaluate(self, grid: Grid) -> np.ndarray:
        if self.kind == "tabulated":
            if self.table.grid.shape != grid.shape:
                raise ValueError("tabulated potential lives on a different grid")
            return self.table.values + self.offset
        coords = grid.mesh()
        u = np.zeros(grid.shape)
        if self.kind == "harmonic":
            center = self.center if len(self.center) == grid.dim else self.center * grid.dim
            for x, c in zip(coords, center):
                u += 0.5 * self.k * (x - c) ** 2
        elif self.kind == "barrier":
            u = np.where(np.abs(coords[0] - self.center[0]) <= 0.5 * self.width, self.height, 0.0)
        return u + self.offset

    def force(self, x: np.ndarray) -> np.ndarray:
        """-grad U at points ``x`` of shape (..., dim), analytic kinds only."""
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            center = np.array(self.center if len(self.center) == x.shape[-1] else self.center * x.shape[-1])
            return -self.k * (x - center)
        raise ValueError(f"no analytic force for potential kind {self.kind!r}")

    def value_at(self, x: np.ndarray) -> np.ndarray:
        """U at points ``x`` of shape (..., dim), analytic kinds only."""
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            return np.full(x.shape[:-1], self.offset)
        if self.kind == "harmonic":
            center = np.array(self.center if len(self.center) == x.shape[-1] else self.center * x.shape[-1])
            return 0.5 * self.k * np.sum((x - center) ** 2, axis=-1) + self.offset
        raise ValueError(f"no analytic value for potential kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "offset": self.offset}
        if self.kind == "harmonic":
            d.update(k=self.k, center=list(self.center))
        elif self.kind == "barrier":
            d.update(height=self.height, center=self.center[0], width=self.width)
        elif self.kind == "tabulated":
            d.update(values=self.table.values.tolist(), grid=self.table.grid.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Potential:
        kind = d.get("kind", "free")
        offset = d.get("offset", 0.0)
        if kind == "harmonic":
            return cls.harmonic(d.get("k", 1.0), tuple(np.atleast_1d(d.get("center", 0.0))), offset)
        if kind == "barrier":
            return cls.barrier(d["height"], d.get("center", 0.0), d.get("width", 1.0), offset)
        if kind == "tabulated":
            grid = Grid.from_dict(d["grid"])
            return cls.tabulated(ScalarField(grid, np.array(d["values"])), offset)
        return cls.free(offset)


# ---------------------------------------------------------------------------
# discrete Hamiltonian


def _kinetic_coeff(p: PhysicalParams, h: float) -> float:
    """Off-diagonal magnitude hbar^2 / (2 m h^2) of the three-point kinetic term."""
    return p.hbar**2 / (2.0 * p.m * h**2)


def _hamiltonian_values(f: np.ndarray, u: np.ndarray, coeffs) -> np.ndarray:
    out = u * f
    for ax, c in enumerate(coeffs):
        g = np.moveaxis(f, ax, 0)
        o = np.moveaxis(out, ax, 0)
        o += 2.0 * c * g
        o[1:] -= c * g[:-1]
        o[:-1] -= c * g[1:]
    return out


def apply_hamiltonian(psi: ComplexField, U: Potential, p: PhysicalParams) -> np.ndarray:
    """H psi with vanishing values outside the grid."""
    coeffs = [_kinetic_coeff(p, h) for h in psi.grid.spacing]
    return _hamiltonian_values(psi.values, U.evaluate(psi.grid), coeffs)


def energy(psi: ComplexField, U: Potential, p: PhysicalParams) -> float:
    """Expectation <psi|H|psi> / <psi|psi>."""
    hpsi = apply_hamiltonian(psi, U, p)
    num = np.vdot(psi.values, hpsi).real
    return float(num / np.vdot(psi.values, psi.values).real)


def _solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm along axis 0, vectorized over trailing axes.

    ``lower``/``upper`` are scalars (constant off-diagonals); ``diag`` and
    ``rhs`` have shape (n, ...).
    """
    n = diag.shape[0]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    denom = diag[0]
    cp[0] = upper / denom
    dp[0] = rhs[0] / denom
    for i in range(1, n):
        denom = diag[i] - lower * cp[i - 1]
        cp[i] = upper / denom
        dp[i] = (rhs[i] - lower * dp[i - 1]) / denom
    x = np.empty_like(rhs)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("tridiagonal solve produced non-finite values")
    return x


class CrankNicolson:
    """Reusable Crank-Nicolson propagator for fixed grid, potential and step.

    1D: one tridiagonal solve per step.  2D: the symmetric product
    ``Cx(dt/2) Cy(dt) Cx(dt/2)`` of one-axis Cayley factors, each containing
    half the potential, so every step is unitary and time-reversible.
    """

    def __init__(self, grid: Grid, U: Potential, p: PhysicalParams, dt: float):
        self.grid, self.U, self.p, self.dt = grid, U, p, float(dt)
        self.u = U.evaluate(grid)
        if grid.dim == 1:
            c = _kinetic_coeff(p, grid.spacing[0])
            a = 1j * self.dt / (2.0 * p.hbar)
            hdiag = 2.0 * c + self.u
            self._diag_l = 1.0 + a * hdiag
            self._diag_r = 1.0 - a * hdiag
            self._off_l = -a * c
            self._off_r = a * c
            n = grid.n[0]
            ab = np.zeros((3, n), dtype=complex)
            ab[0, 1:] = self._off_l
            ab[1] = self._diag_l
            ab[2, :-1] = self._off_l
            self._ab = ab

    def _apply_rhs_1d(self, f):
        out = self._diag_r * f
        out[1:] += self._off_r * f[:-1]
        out[:-1] += self._off_r * f[1:]
        return out

    def _cayley_axis(self, f: np.ndarray, axis: int, tau: float) -> np.ndarray:
        """(1 + i tau A/2hbar)^-1 (1 - i tau A/2hbar) along one axis, A = T_axis + U/2."""
        c = _kinetic_coeff(self.p, self.grid.spacing[axis])
        a = 1j * tau / (2.0 * self.p.hbar)
        g = np.moveaxis(f, axis, 0)
        hdiag = 2.0 * c + 0.5 * np.moveaxis(self.u, axis, 0)
        rhs = (1.0 - a * hdiag) * g
        rhs[1:] += a * c * g[:-1]
        rhs[:-1] += a * c * g[1:]
        out = _solve_tridiagonal(-a * c, 1.0 + a * hdiag, -a * c, rhs)
        return np.moveaxis(out, 0, axis)

    def step_values(self, f: np.ndarray) -> np.ndarray:
        if self.dt == 0.0:
            return f.copy()
        if self.grid.dim == 1:
            rhs = self._apply_rhs_1d(f)
            try:
                out = solve_banded((1, 1), self._ab, rhs, check_finite=True)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise LinearSolveFailure(str(exc)) from exc
            return out
        f = self._cayley_axis(f, 0, 0.5 * self.dt)
        f = self._cayley_axis(f, 1, self.dt)
        return self._cayley_axis(f, 0, 0.5 * self.dt)

    def step(self, psi: ComplexField) -> ComplexField:
        return ComplexField(psi.grid, self.step_values(psi.values))


def step_crank_nicolson(psi: ComplexField, U: Potential, p: PhysicalParams, dt: float) -> ComplexField:
    """Advance psi by ``dt`` under i hbar dpsi/dt = -(hbar^2/2m) lap psi + U psi."""
    if dt == 0:
        return ComplexField(psi.grid, psi.values.copy())
    return CrankNicolson(psi.grid, U, p, dt).step(psi)


def stability_advisory_dt(grid: Grid, p: PhysicalParams) -> float:
    """m h^2 / hbar; Crank-Nicolson is stable beyond it but loses phase accuracy."""
    return p.m * min(grid.spacing) ** 2 / p.hbar


def ground_state_imaginary_time(
    U: Potential,
    p: PhysicalParams,
    grid: Grid,
    tol: float = 1e-12,
    *,
    tau: float | None = None,
    residual_tol: float = 1e-10,
    max_iter: int = 2_000_000,
    psi0: ComplexField | None = None,
) -> tuple[ComplexField, float]:
    """Relax to the lowest eigenstate by explicit imaginary-time steps.

    Each step is ``psi -= (tau/hbar) (H - E) psi`` followed by renormalization,
    with E the current Rayleigh quotient.  Converged once the energy change
    per step is below ``tol`` and the eigen-residual norm ``||(H - E) psi||``
    is below ``residual_tol``.
    """
    if tau is None:
        tau = 0.1 * p.m * min(grid.spacing) ** 2 / p.hbar
    dv = grid.cell_volume
    if psi0 is None:
        u = U.evaluate(grid)
        # start from a broad positive bump around the potential minimum
        width = 0.25 * min(hi - lo for lo, hi in grid.extents)
        centre = [c.ravel()[np.argmin(u)] for c in grid.mesh()]
        r2 = sum((c - c0) ** 2 for c, c0 in zip(grid.mesh(), centre))
        f = np.exp(-r2 / (2 * width**2)).astype(complex)
    else:
        f = psi0.values.astype(complex)
    f = f / np.sqrt(np.sum(np.abs(f) ** 2) * dv)
    u = U.evaluate(grid)
    coeffs = [_kinetic_coeff(p, h) for h in grid.spacing]
    step = tau / p.hbar
    e_old = math.inf
    for it in range(max_iter):
        hf = _hamiltonian_values(f, u, coeffs)
        e = float(np.vdot(f, hf).real * dv)
        res = hf - e * f
        rnorm = math.sqrt(float(np.vdot(res, res).real * dv))
        if abs(e - e_old) < tol and rnorm < residual_tol:
            break
        e_old = e
        f = f - step * res
        f = f / math.sqrt(float(np.vdot(f, f).real * dv))
    else:
        raise NoConvergence(f"imaginary-time relaxation did not converge in {max_iter} steps")
    # real, nonnegative representative
    f = np.abs(f)
    psi = ComplexField(grid, f).normalized()
    return psi, energy(psi, U, p)


def analytic_gaussian_packet(
    x0, p0, sigma0: float, t: float, p: PhysicalParams, grid: Grid
) -> ComplexField:
    """Exact free-particle Gaussian packet; |psi(t=0)|^2 has variance sigma0^2 per axis."""
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    x0 = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (grid.dim,))
    p0 = np.broadcast_to(np.atleast_1d(np.asarray(p0, dtype=float)), (grid.dim,))
    alpha = 1.0 + 1j * p.hbar * t / (2.0 * p.m * sigma0**2)
    out = np.ones(grid.shape, dtype=complex)
    for x, c, k in zip(grid.mesh(), x0, p0):
        xc = x - c - k * t / p.m
        out *= (
            (2.0 * np.pi * sigma0**2) ** -0.25
            / np.sqrt(alpha)
            * np.exp(
                -(xc**2) / (4.0 * sigma0**2 * alpha)
                + 1j * k * (x - c) / p.hbar
                - 1j * k**2 * t / (2.0 * p.m * p.hbar)
            )
        )
    return ComplexField(grid, out)


def gaussian_width_squared(sigma0: float, t: float, p: PhysicalParams) -> float:
    """Variance of |psi|^2 for the free packet: sigma0^2 (1 + (hbar t / 2 m sigma0^2)^2)."""
    return sigma0**2 * (1.0 + (p.hbar * t / (2.0 * p.m * sigma0**2)) ** 2)


def eigenstates_bruteforce(U: Potential, p: PhysicalParams, grid: Grid, count: int = 2):
    """Lowest eigenpairs of the discrete 1D Hamiltonian by dense diagonalization.

    Used as an independent check on the relaxation; small grids only.
    """
    if grid.dim != 1:
        raise ValueError("brute-force eigensolve is 1D only")
    from scipy.linalg import eigh_tridiagonal

    c = _kinetic_coeff(p, grid.spacing[0])
    d = 2.0 * c + U.evaluate(grid)
    e = np.full(grid.n[0] - 1, -c)
    w, v = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
    states = []
    for k in range(count):
        vec = v[:, k]
        vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
        states.append(ComplexField(grid, vec.astype(complex)).normalized())
    return w, states


def vortex_state(grid: Grid, charge: int = 1, width: float = 1 / math.sqrt(2), center=(0.0, 0.0)) -> ComplexField:
    """Normalized ``((x - x0) + i sgn(l) (y - y0))^|l| exp(-r^2 / 2 width^2)``."""
    if grid.dim != 2:
        raise ValueError("vortex states need a 2D grid")
    x, y = grid.mesh()
    dx, dy = x - center[0], y - center[1]
    core = (dx + 1j * np.sign(charge) * dy) ** abs(charge)
    return ComplexField(grid, core * np.exp(-(dx**2 + dy**2) / (2 * width**2))).normalized()


def harmonic_two_level(grid: Grid, p: PhysicalParams, k: float, t: float = 0.0) -> ComplexField:
    """Equal-weight superposition of the two lowest oscillator levels at time ``t``.

    1D: ground and first excited state.  2D: ground state and the
    unit-charge vortex state of the first excited level, whose density zero
    circles the origin at the oscillator frequency.
    """
    omega = math.sqrt(k / p.m)
    ell = math.sqrt(p.hbar / (p.m * omega))
    mesh = grid.mesh()
    r2 = sum(c**2 for c in mesh)
    g = np.exp(-r2 / (2 * ell**2))
    if grid.dim == 1:
        x = mesh[0]
        lower = g / (math.pi**0.25 * math.sqrt(ell))
        upper = math.sqrt(2.0) * x / ell * lower
        e0, e1 = 0.5 * p.hbar * omega, 1.5 * p.hbar * omega
    else:
        x, y = mesh
        lower = g / (math.sqrt(math.pi) * ell)
        upper = (x + 1j * y) / ell * lower
        e0, e1 = p.hbar * omega, 2.0 * p.hbar * omega
    psi = (np.exp(-1j * e0 * t / p.hbar) * lower + np.exp(-1j * e1 * t / p.hbar) * upper) / math.sqrt(2.0)
    return ComplexField(grid, psi).normalized()
