"""
Initial data for the solver and radial profiles for the decay quadrature.

Admissible strains come from flow maps: particles are carried by a steady,
band-limited, divergence-free field psi, X -> phi(X) = X + zeta(X), and
E0(x) = grad_X zeta evaluated at the preimage of x. Such E0 satisfies the
determinant, row divergence and Piola constraints up to the ODE and
interpolation error.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from django.db import models
from scipy.integrate import solve_ivp

from lab.exceptions import (
    ContractViolation,
    InfeasibleProfile,
    InterpolationResidualError,
    NonDiffeomorphicMap,
)
from lab.invariants import det_deviation, div_FT_norm, piola_residual
from lab.quadrature import SpectralProfile
from lab.solver import State, deformation_gradient
from lab.spectral import PointEvaluator, SpectralField, grad, random_solenoidal

logger = logging.getLogger(__name__)

MIN_JACOBIAN = 0.5
PROFILE_SLACK = 1e-9


class RecipeKind(models.TextChoices):
    ZERO_STRAIN = "zero_strain"
    LAGRANGIAN_MAP = "lagrangian_map"
    SPECTRAL_PROFILE = "spectral_profile"


class ProfileShape(models.TextChoices):
    GAUSSIAN = "gaussian"
    HIGH_PASS = "high_pass"


@dataclass
class DataRecipe:
    kind: str = RecipeKind.ZERO_STRAIN
    delta: float = 1e-2
    seed: int = 0
    modes: int | None = None
    c0: float | None = None
    zeta: float = 0.5
    shape: str = ProfileShape.GAUSSIAN
    flow_time: float = 1.0
    ode_tol: float = 1e-12
    strain_fraction: float = 0.5
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RecipeKind.values:
            raise ValueError(f"unknown recipe kind '{self.kind}'")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def to_dict(self):
        return asdict(self)


class ConstructedData(NamedTuple):
    state: State
    report: dict


def rng_streams(seed, count=2):
    """Independent counter-based generators derived from one seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def _normalized_velocity(grid, rng, band, amplitude):
    u = random_solenoidal(grid, rng, band=band)
    size = u.sobolev_norm(2)
    if size == 0:
        raise ContractViolation("the requested band holds no divergence-free modes")
    return u * (amplitude / size)


def make_zero_strain(delta, seed, grid, band=None, mu=1.0):
    """u0 with ||u0||_H2 = delta and E0 = 0."""
    u_rng, _ = rng_streams(seed)
    u = _normalized_velocity(grid, u_rng, band, delta)
    return State(u, SpectralField.zeros(grid, 2), 0.0, mu)


def _flow_map(psi, grid, flow_time, ode_tol):
    """Displacement zeta(X) = phi(X) - X on the grid, by DOP853 on every particle."""
    evaluate = PointEvaluator(psi)
    start = grid.coordinates.reshape(grid.dim, -1)

    def velocity(_, y):
        return evaluate(y.reshape(grid.dim, -1)).ravel()

    solution = solve_ivp(
        velocity, (0.0, flow_time), start.ravel(), method="DOP853", rtol=ode_tol, atol=ode_tol
    )
    if not solution.success:
        raise ContractViolation(f"particle integration failed: {solution.message}")
    logger.debug(f"particle paths: {solution.nfev} right-hand side evaluations")
    end = solution.y[:, -1].reshape(grid.dim, -1)
    return SpectralField.from_physical(grid, (end - start).reshape((grid.dim,) + grid.shape), 1)


def _preimages(zeta, grid, tol, max_iterations):
    """Solve X + zeta(X) = x for every grid point x by fixed-point iteration."""
    evaluate = PointEvaluator(zeta)
    targets = grid.coordinates.reshape(grid.dim, -1)
    points = targets.copy()
    for iteration in range(1, max_iterations + 1):
        updated = targets - evaluate(points)
        change = float(np.max(np.abs(updated - points)))
        points = updated
        if change <= tol:
            break
    residual = float(np.max(np.abs(points + evaluate(points) - targets)))
    return points, residual, iteration


def _strain_from_map(psi, grid, flow_time, ode_tol, interp_tol, max_iterations):
    zeta = _flow_map(psi, grid, flow_time, ode_tol)
    lagrangian_gradient = grad(zeta)
    F = deformation_gradient(lagrangian_gradient)
    min_jacobian = float(np.min(np.linalg.det(np.moveaxis(F, (0, 1), (-2, -1)))))
    if min_jacobian <= MIN_JACOBIAN:
        raise NonDiffeomorphicMap(min_jacobian)

    preimages, preimage_residual, iterations = _preimages(zeta, grid, 0.1 * interp_tol, max_iterations)
    coeffs = np.abs(zeta.coeffs)
    edge = ~grid.band_mask(grid.points_per_axis // 2 - 2)
    spectral_tail = float(np.max(coeffs[:, edge]) / max(float(np.max(coeffs)), 1e-300))
    residuals = {"preimage": preimage_residual, "spectral_tail": spectral_tail}
    if max(residuals.values()) > interp_tol:
        raise InterpolationResidualError(residuals)

    values = PointEvaluator(lagrangian_gradient)(preimages).reshape((grid.dim, grid.dim) + grid.shape)
    E = SpectralField.from_physical(grid, values, 2).dealiased()
    return E, {
        "min_jacobian": min_jacobian,
        "fixed_point_iterations": iterations,
        **{f"interpolation_{k}": v for k, v in residuals.items()},
    }


def construct_lagrangian(
    delta,
    seed,
    grid,
    flow_time=1.0,
    ode_tol=1e-12,
    band=None,
    psi_band=2,
    strain_fraction=0.5,
    interp_tol=1e-10,
    max_iterations=200,
    mu=1.0,
):
    """
    Build (u0, E0) with E0 pushed forward from a flow map. The amplitude of psi
    is set by one secant step so that ||E0||_H2 is close to strain_fraction * delta;
    u0 then takes the rest of the delta budget.
    """
    u_rng, psi_rng = rng_streams(seed)
    report = {"delta": delta, "seed": seed, "flow_time": flow_time, "ode_tol": ode_tol}
    if flow_time == 0:
        E = SpectralField.zeros(grid, 2)
        report.update(psi_amplitude=0.0, min_jacobian=1.0)
    else:
        psi = random_solenoidal(grid, psi_rng, band=psi_band)
        psi = psi * (1.0 / grad(psi).sobolev_norm(2))
        target = strain_fraction * delta
        amplitude = target / flow_time
        E, details = _strain_from_map(psi * amplitude, grid, flow_time, ode_tol, interp_tol, max_iterations)
        achieved = E.sobolev_norm(2)
        if achieved > 0 and abs(achieved - target) > 1e-3 * target:
            amplitude *= target / achieved
            E, details = _strain_from_map(psi * amplitude, grid, flow_time, ode_tol, interp_tol, max_iterations)
        report.update(psi_amplitude=amplitude, **details)

    strain_size = E.sobolev_norm(2)
    if strain_size >= delta:
        raise ContractViolation(f"strain alone uses {strain_size:.3e} of the delta={delta:g} budget")
    u = _normalized_velocity(grid, u_rng, band, delta - strain_size)
    state = State(u, E, 0.0, mu)
    report.update(
        det_dev=det_deviation(E),
        divFT=div_FT_norm(E),
        piola=piola_residual(E),
        u_h2=u.sobolev_norm(2),
        E_h2=strain_size,
    )
    logger.info(
        f"lagrangian data: ||E0||_H2={strain_size:.4e}, det_dev={report['det_dev']:.2e}, "
        f"divFT={report['divFT']:.2e}, piola={report['piola']:.2e}"
    )
    return ConstructedData(state, report)


def make_lagrangian_strain(delta, seed, grid, flow_time=1.0, ode_tol=1e-12, **options):
    return construct_lagrangian(delta, seed, grid, flow_time, ode_tol, **options).state


def make_profile(delta, c0=None, zeta=0.5, shape=ProfileShape.GAUSSIAN, xi_floor=0.1, floor_slack=0.05, angular=None):
    """
    Radial (u, n) transforms. The Gaussian c0 exp(-r^2) has its sup, c0, at the
    origin; c0 defaults to the largest admissible value delta^zeta.
    """
    if not 0 < zeta < 1:
        raise InfeasibleProfile(f"zeta must lie in (0, 1), got {zeta}")
    budget = delta**zeta
    c0 = budget if c0 is None else c0
    if c0 > budget * (1 + PROFILE_SLACK):
        raise InfeasibleProfile(f"c0={c0:g} exceeds the delta^zeta budget {budget:g}")

    if shape == ProfileShape.GAUSSIAN:
        amplitude = c0

        def radial(r):
            return amplitude * np.exp(-(r**2))

    elif shape == ProfileShape.HIGH_PASS:
        if c0 > 0:
            raise InfeasibleProfile("a high-pass profile vanishes at the origin and cannot carry a floor c0 > 0")
        amplitude = budget

        def radial(r):
            return amplitude * r**4 * np.exp(-(r**2))

    else:
        raise InfeasibleProfile(f"unknown profile shape '{shape}'")

    profile = SpectralProfile(
        u_hat=radial, n_hat=radial, c0=c0, xi_floor=xi_floor, angular=angular, label=str(shape)
    )
    if not profile.floor_certified(floor_slack):
        raise InfeasibleProfile(
            f"floor c0={c0:g} not reached on [0, {xi_floor:g}]: minimum {profile.floor_minimum():.4g}"
        )
    return profile


def build(recipe, grid=None, mu=1.0):
    """Dispatch a recipe. Returns ConstructedData for states, a SpectralProfile otherwise."""
    if recipe.kind == RecipeKind.SPECTRAL_PROFILE:
        options = {key: recipe.extra[key] for key in ("xi_floor", "floor_slack") if key in recipe.extra}
        return make_profile(recipe.delta, recipe.c0, recipe.zeta, recipe.shape, **options)
    if grid is None:
        raise ContractViolation(f"recipe '{recipe.kind}' needs a grid")
    if recipe.kind == RecipeKind.ZERO_STRAIN:
        state = make_zero_strain(recipe.delta, recipe.seed, grid, recipe.modes, mu)
        return ConstructedData(
            state,
            {"delta": recipe.delta, "seed": recipe.seed, "det_dev": 0.0, "divFT": 0.0, "piola": 0.0},
        )
    return construct_lagrangian(
        recipe.delta,
        recipe.seed,
        grid,
        recipe.flow_time,
        recipe.ode_tol,
        band=recipe.modes,
        strain_fraction=recipe.strain_fraction,
        interp_tol=recipe.extra.get("interp_tol", 1e-10),
        mu=mu,
    )


def perturb_strain(state, epsilon, seed):
    """Add a random dealiased strain of L2 norm epsilon; used for perturbed weak data."""
    rng = rng_streams(seed, 3)[2]
    direction = grad(random_solenoidal(state.grid, rng)).dealiased()
    direction = direction * (epsilon / max(direction.norm(), 1e-300))
    return state.replace(E=state.E + direction)
