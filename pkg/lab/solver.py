"""
Time stepping of the (u, E) system on the periodic grid.

    u_t + u.grad u + grad p = mu lap u + div E + div(E E^T),   div u = 0
    E_t + u.grad E = grad u + grad u E

The linear part is propagated exactly mode by mode through the (u, n) pair;
the strain picks up the closed-form time integral of i xi_j u_i over the
step. Nonlinear terms enter through an integrating-factor Heun scheme
(trapezoidal Duhamel weights), second order in dt.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from lab.exceptions import BlowUpError, CFLViolation, ContractViolation
from lab.semigroup import greens_batch, greens_integral
from lab.spectral import (
    SpectralField,
    dealiased_transform,
    div,
    divergence_defect,
    grad,
    lambda_power,
    leray_project,
    physical_gradient,
)

logger = logging.getLogger(__name__)

STRAIN_FORMS = ("advective", "conservative")


@dataclass(frozen=True, eq=False)
class State:
    u: SpectralField
    E: SpectralField
    t: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if self.u.rank != 1 or self.E.rank != 2:
            raise ContractViolation("a State needs a vector u and a tensor E")
        if self.u.grid != self.E.grid:
            raise ContractViolation("u and E live on different grids")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def grid(self):
        return self.u.grid

    @classmethod
    def at_rest(cls, grid, mu=1.0, t=0.0):
        return cls(SpectralField.zeros(grid, 1), SpectralField.zeros(grid, 2), t, mu)

    def replace(self, **changes):
        values = {"u": self.u, "E": self.E, "t": self.t, "mu": self.mu}
        values.update(changes)
        return State(**values)

    def energy(self):
        return 0.5 * (self.u.norm_sq() + self.E.norm_sq())

    def dissipation(self):
        return self.mu * grad(self.u).norm_sq()

    def h2_size(self):
        """||u||_H2 + ||E||_H2."""
        return self.u.sobolev_norm(2) + self.E.sobolev_norm(2)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.u.coeffs)) and np.all(np.isfinite(self.E.coeffs)))

    def divergence_ratio(self):
        """max-mode |xi . u_k| relative to ||u||; 0 for u = 0."""
        size = self.u.norm()
        return divergence_defect(self.u) / size if size > 0 else 0.0


@dataclass(frozen=True, eq=False)
class DecomposedState:
    n: SpectralField
    Omega: SpectralField
    Ebb: SpectralField


def decompose(s):
    """n = Lambda^-1 div E, Omega = Lambda^-1 (grad u - grad^T u), Ebb = E^T - E."""
    grad_u = grad(s.u)
    return DecomposedState(
        n=lambda_power(div(s.E), -1),
        Omega=lambda_power(grad_u - grad_u.transpose(), -1),
        Ebb=s.E.transpose() - s.E,
    )


def deformation_gradient(E):
    """F = I + E sampled on the grid, shape (d, d, N, ..., N)."""
    values = E.physical()
    for i in range(E.grid.dim):
        values[i, i] += 1.0
    return values


def _physical_fields(s):
    u = s.u.dealiased()
    E = s.E.dealiased()
    return u.physical(), physical_gradient(u), E.physical(), physical_gradient(E)


def _divergence_last(coeffs, grid):
    """Contract the last component index with i xi."""
    kd = grid.derivative_wavevectors
    return np.sum(1j * kd * coeffs, axis=coeffs.ndim - grid.dim - 1)


def compute_nonlinearities(s, strain_form="advective"):
    """
    g = P(-u.grad u + div(E E^T)) and
    h_ij = -u_k d_k E_ij + d_k u_i E_kj (advective) or
    h_ij = -d_k (E_ij u_k - u_i E_kj) (conservative).
    Products are formed from dealiased inputs and masked again.
    """
    if strain_form not in STRAIN_FORMS:
        raise ContractViolation(f"unknown strain form '{strain_form}'")
    grid = s.grid
    u, grad_u, E, grad_E = _physical_fields(s)

    advection = np.einsum("k...,ik...->i...", u, grad_u)
    stress = np.einsum("ik...,jk...->ij...", E, E)
    momentum = -dealiased_transform(advection, grid) + _divergence_last(dealiased_transform(stress, grid), grid)
    g = leray_project(SpectralField(grid, 1, momentum))

    if strain_form == "advective":
        transport = np.einsum("k...,ijk...->ij...", u, grad_E)
        stretching = np.einsum("ik...,kj...->ij...", grad_u, E)
        h_coeffs = dealiased_transform(stretching - transport, grid)
    else:
        flux = np.einsum("ij...,k...->ijk...", E, u) - np.einsum("i...,kj...->ijk...", u, E)
        h_coeffs = -_divergence_last(dealiased_transform(flux, grid), grid)
    return g, SpectralField(grid, 2, h_coeffs)


def recover_pressure(s):
    """
    Solve lap p = div f with f = -u.grad u + div(E + E E^T); zero mean.
    """
    grid = s.grid
    u, grad_u, E, _ = _physical_fields(s)
    advection = np.einsum("k...,ik...->i...", u, grad_u)
    stress = E + np.einsum("ik...,jk...->ij...", E, E)
    force = -dealiased_transform(advection, grid) + _divergence_last(dealiased_transform(stress, grid), grid)
    along = _divergence_last(force, grid)
    r2 = grid.xi_mag_safe**2
    pressure = np.where(grid.zero_mode, 0.0, -along / r2)
    return SpectralField(grid, 0, pressure)


def momentum_residual(s, pressure):
    """f - grad p; divergence free when p is the recovered pressure."""
    grid = s.grid
    u, grad_u, E, _ = _physical_fields(s)
    advection = np.einsum("k...,ik...->i...", u, grad_u)
    stress = E + np.einsum("ik...,jk...->ij...", E, E)
    force = -dealiased_transform(advection, grid) + _divergence_last(dealiased_transform(stress, grid), grid)
    return SpectralField(grid, 1, force) - grad(pressure)


def cfl_limit(s, c_cfl=0.5, eps_u=1e-12):
    return c_cfl * s.grid.spacing / max(s.u.max_abs(), eps_u)


class Integrator:
    """
    Precomputed per-mode propagator for one (grid, mu, dt). `step` advances a
    State by dt; with `nonlinear=False` it is the exact linear flow.
    """

    def __init__(self, grid, mu, dt, nonlinear=True, strain_form="advective"):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if strain_form not in STRAIN_FORMS:
            raise ContractViolation(f"unknown strain form '{strain_form}'")
        self.grid = grid
        self.mu = mu
        self.dt = dt
        self.nonlinear = nonlinear
        self.strain_form = strain_form
        self.greens = greens_batch(dt, grid.xi_mag, mu)
        self.antiderivative = greens_integral(dt, grid.xi_mag, mu)

    def propagate(self, u, E):
        """Exact linear flow over dt of the coefficient pair (u, E)."""
        grid = self.grid
        u = leray_project(u)
        n = leray_project(lambda_power(div(E), -1))
        u_new, _ = self.greens.apply((u.coeffs, n.coeffs))
        accumulated = self.antiderivative.from_u * u.coeffs + self.antiderivative.from_n * n.coeffs
        kd = grid.derivative_wavevectors
        E_new = E.coeffs + 1j * accumulated[:, None] * kd[None, :]
        return u.with_coeffs(u_new), E.with_coeffs(E_new)

    def nonlinearity(self, u, E):
        if not self.nonlinear:
            return SpectralField.zeros(self.grid, 1), SpectralField.zeros(self.grid, 2)
        return compute_nonlinearities(State(u, E, mu=self.mu), self.strain_form)

    def step(self, s):
        if s.grid != self.grid or s.mu != self.mu:
            raise ContractViolation("state does not match the integrator grid or viscosity")
        dt = self.dt
        u_lin, E_lin = self.propagate(s.u, s.E)
        if self.nonlinear:
            g, h = self.nonlinearity(s.u, s.E)
            g_lin, h_lin = self.propagate(g, h)
            u_pred = u_lin + dt * g_lin
            E_pred = E_lin + dt * h_lin
            g_pred, h_pred = self.nonlinearity(u_pred, E_pred)
            u_new = u_lin + 0.5 * dt * (g_lin + g_pred)
            E_new = E_lin + 0.5 * dt * (h_lin + h_pred)
        else:
            u_new, E_new = u_lin, E_lin
        u_new = leray_project(u_new).realified().dealiased()
        E_new = E_new.realified().dealiased()
        return State(u_new, E_new, s.t + dt, s.mu)


@lru_cache(maxsize=16)
def integrator_for(grid, mu, dt, nonlinear=True, strain_form="advective"):
    return Integrator(grid, mu, dt, nonlinear, strain_form)


def step(s, dt, nonlinear=True, strain_form="advective", c_cfl=0.5, eps_u=1e-12):
    limit = cfl_limit(s, c_cfl, eps_u)
    if dt > limit:
        raise CFLViolation(dt, limit)
    new = integrator_for(s.grid, s.mu, dt, nonlinear, strain_form).step(s)
    if not new.is_finite():
        raise BlowUpError(new.t, float("nan"))
    return new


def energy_step_residual(before, after, dt):
    """e1 - e0 + dt/2 (d0 + d1): the trapezoidal defect of the energy law over one step."""
    return after.energy() - before.energy() + 0.5 * dt * (before.dissipation() + after.dissipation())


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    monitor_rows: list = field(default_factory=list)
    energy_steps: list = field(default_factory=list)
    snapshot_paths: list = field(default_factory=list)
    initial_size: float = 0.0

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def final(self):
        return self.states[-1]


def step_count(T, dt):
    steps = T / dt
    count = int(round(steps))
    if abs(steps - count) > 1e-9 * max(1.0, steps):
        raise ContractViolation(f"T={T:g} is not a whole number of steps of dt={dt:g}")
    return count


def run(
    s0,
    T,
    dt,
    monitors=None,
    cadence=1,
    writer=None,
    nonlinear=True,
    strain_form="advective",
    c_cfl=0.5,
    eps_u=1e-12,
    blowup_factor=10.0,
    initial_size=None,
):
    """
    Advance s0 to s0.t + T. Snapshots every `cadence` steps (and at the end) are
    kept in memory, written through `writer` when given, and passed to
    `monitors`, which must not modify them.
    """
    if cadence < 1:
        raise ValueError(f"cadence must be at least 1, got {cadence}")
    steps = step_count(T, dt)
    t0 = s0.t
    initial_size = s0.h2_size() if initial_size is None else initial_size
    trajectory = Trajectory(initial_size=initial_size)

    def record(state):
        trajectory.states.append(state)
        if monitors is not None:
            trajectory.monitor_rows.append(monitors(state))
        if writer is not None:
            trajectory.snapshot_paths.append(writer.write_snapshot(len(trajectory.states) - 1, state))

    record(s0)
    logger.info(f"running {steps} steps of dt={dt:g} from t={t0:g} on {s0.grid}")
    current = s0
    for n in range(1, steps + 1):
        new = step(current, dt, nonlinear, strain_form, c_cfl, eps_u)
        new = new.replace(t=t0 + n * dt)
        size = new.h2_size()
        if initial_size > 0 and size > blowup_factor * initial_size:
            raise BlowUpError(new.t, size, f"H2 size grew past {blowup_factor:g}x the initial value")
        trajectory.energy_steps.append(
            {
                "step": n,
                "t": new.t,
                "energy": new.energy(),
                "dissipation": new.dissipation(),
                "residual": energy_step_residual(current, new, dt),
            }
        )
        current = new
        if n % cadence == 0 or n == steps:
            record(current)
        logger.debug(f"step {n}/{steps}: t={current.t:.6g}, H2 size {size:.4e}")

    if writer is not None:
        writer.write_rows("energy_steps.csv", trajectory.energy_steps)
        if monitors is not None:
            writer.write_rows("monitors.csv", trajectory.monitor_rows)
    return trajectory
