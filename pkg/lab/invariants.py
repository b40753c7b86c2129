"""
Structural monitors for (u, E) states.

Deformation gradients F = I + E of volume-preserving flow maps satisfy
det F = 1, div F^T = 0 and the Piola compatibility

    d_m E_ij - d_j E_im = E_lj d_l E_im - E_lm d_l E_ij

exactly. The monitors here measure how far a discrete state is from each of
them, together with the energy law and the higher-order functionals
G = 1/2 (|u|^2 + |E|^2 + |lap u|^2 + |lap E|^2) + kappa (Lambda Omega, lap Ebb)
and H (the same without the L2 terms).
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from lab.exceptions import ContractViolation
from lab.solver import State, decompose, deformation_gradient
from lab.spectral import (
    dealiased_transform,
    div,
    grad,
    laplacian,
    physical_gradient,
    random_field,
    random_solenoidal,
)

logger = logging.getLogger(__name__)

DEFAULT_KAPPA_MAX = 0.1
STRUCTURAL_QUANTITIES = ("det_dev", "divFT", "piola")


class HodgeStatus:
    OK = "ok"
    SKIPPED = "skipped"
    DEGENERATE = "degenerate"


@dataclass
class InvariantReport:
    t: float
    det_dev: float
    divFT: float
    piola: float
    energy: float
    dissipation: float
    G: float
    H: float
    kappa: float
    H_tilde: float = 0.0
    commutator: float = 0.0
    u_l2: float = 0.0
    E_l2: float = 0.0
    h2_size: float = 0.0

    def as_row(self):
        return asdict(self)


def det_deviation(E):
    """max over grid points of |det(I + E) - 1|."""
    matrices = np.moveaxis(deformation_gradient(E.dealiased()), (0, 1), (-2, -1))
    return float(np.max(np.abs(np.linalg.det(matrices) - 1.0)))


def div_FT_norm(E):
    """L2 norm of d_i E_ij."""
    return div(E.transpose()).norm()


def _piola_terms(E):
    grid = E.grid
    masked = E.dealiased()
    values = masked.physical()
    gradient = physical_gradient(masked)
    linear = gradient - np.swapaxes(gradient, 1, 2)
    quadratic = np.einsum("lj...,iml...->ijm...", values, gradient) - np.einsum(
        "lm...,ijl...->ijm...", values, gradient
    )
    linear_coeffs = dealiased_transform(linear, grid)
    quadratic_coeffs = dealiased_transform(quadratic, grid)
    return linear_coeffs, quadratic_coeffs


def piola_residual(E):
    """L2 norm over (i, j, m) of d_m E_ij - d_j E_im - (E_lj d_l E_im - E_lm d_l E_ij)."""
    linear, quadratic = _piola_terms(E)
    return float(np.sqrt(E.grid.parseval_factor() * np.sum(np.abs(linear - quadratic) ** 2)))


def curl_commutator_residual(E):
    """
    Residual of grad div E - grad^T div E = lap(E - E^T) + S, where
    S_ij = d_k (Q_jik - Q_ijk) and Q_ijk = E_lj d_l E_ik - E_lk d_l E_ij.
    Vanishes when the Piola identity holds.
    """
    grid = E.grid
    _, quadratic = _piola_terms(E)
    kd = grid.derivative_wavevectors
    contracted = np.sum(1j * kd[None, None] * quadratic, axis=2)
    S = np.swapaxes(contracted, 0, 1) - contracted
    grad_div = grad(div(E)).coeffs
    lhs = grad_div - np.swapaxes(grad_div, 0, 1)
    rhs = laplacian(E - E.transpose()).coeffs + S
    return float(np.sqrt(grid.parseval_factor() * np.sum(np.abs(lhs - rhs) ** 2)))


def energy_law_residual(states):
    """Centered-difference residual d/dt energy + dissipation at interior snapshots."""
    if len(states) < 3:
        raise ContractViolation("the energy law residual needs at least three snapshots")
    energies = np.array([s.energy() for s in states])
    times = np.array([s.t for s in states])
    rows = []
    for k in range(1, len(states) - 1):
        rate = (energies[k + 1] - energies[k - 1]) / (times[k + 1] - times[k - 1])
        rows.append({"t": float(times[k]), "residual": float(rate + states[k].dissipation())})
    return rows


def trapezoid_energy_balance(states):
    """energy(t) + mu int_0^t |grad u|^2 - energy(0), trapezoidal in time."""
    times = np.array([s.t for s in states])
    dissipations = np.array([s.dissipation() for s in states])
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (dissipations[1:] + dissipations[:-1]))])
    e0 = states[0].energy()
    return [float(s.energy() + c - e0) for s, c in zip(states, cumulative)]


def _coupling(s):
    """(Lambda Omega, lap Ebb) with Lambda Omega = grad u - grad^T u."""
    grad_u = grad(s.u)
    lambda_omega = grad_u - grad_u.transpose()
    return lambda_omega.inner(laplacian(decompose(s).Ebb))


def lyapunov_G(s, kappa):
    return (
        0.5
        * (
            s.u.norm_sq()
            + s.E.norm_sq()
            + laplacian(s.u).norm_sq()
            + laplacian(s.E).norm_sq()
        )
        + kappa * _coupling(s)
    )


def functional_H(s, kappa):
    return 0.5 * (laplacian(s.u).norm_sq() + laplacian(s.E).norm_sq()) + kappa * _coupling(s)


def h2_squared(s):
    return s.u.sobolev_norm(2) ** 2 + s.E.sobolev_norm(2) ** 2


def sandwich_holds(s, kappa):
    size = h2_squared(s)
    value = lyapunov_G(s, kappa)
    return 0.25 * size <= value <= size


def probe_states(grid, rng, count=8, mu=1.0):
    """Random band-limited states of unit size used to pick kappa."""
    probes = []
    for _ in range(count):
        u = random_solenoidal(grid, rng)
        E = random_field(grid, 2, rng)
        probes.append(State(u * (1.0 / max(u.norm(), 1e-300)), E * (1.0 / max(E.norm(), 1e-300)), mu=mu))
    return probes


def select_kappa(probes, kappa_max=DEFAULT_KAPPA_MAX, iterations=40):
    """Largest kappa in [0, kappa_max] for which the sandwich holds on every probe."""
    if all(sandwich_holds(s, kappa_max) for s in probes):
        return kappa_max
    lo, hi = 0.0, kappa_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if all(sandwich_holds(s, mid) for s in probes):
            lo = mid
        else:
            hi = mid
    logger.info(f"kappa reduced to {lo:.4g} to keep the sandwich on {len(probes)} probes")
    return lo


def hodge_equivalence_check(s, smallness=0.1, constant=1.0, ratio_tol=0.1, degenerate_tol=1e-12):
    """
    Compare ||E|| with ||n|| and ||grad E|| with ||grad n||, and test
    ||lap E|| <= C ||lap Ebb|| / (1 - C ||E||_H2) with C = `constant`. For E with
    gradient rows the first two ratios are 1 and ||lap E|| / ||lap Ebb|| is
    1/sqrt(2) when the rows are also divergence free.

    `pass` is None when the check does not apply (skipped or degenerate).
    """
    size = s.E.sobolev_norm(2)
    if size > smallness:
        return {
            "status": HodgeStatus.SKIPPED,
            "t": s.t,
            "reason": f"||E||_H2 = {size:.3e} exceeds {smallness:g}",
            "pass": None,
        }
    e_norm = s.E.norm()
    if e_norm == 0:
        return {
            "status": HodgeStatus.OK,
            "t": s.t,
            "l2_ratio": 1.0,
            "grad_ratio": 1.0,
            "lap_ratio": None,
            "h2_size": 0.0,
            "pass": True,
        }

    parts = decompose(s)
    n_norm = parts.n.norm()
    if n_norm <= degenerate_tol * e_norm:
        return {
            "status": HodgeStatus.DEGENERATE,
            "t": s.t,
            "reason": "E has no divergence part; the comparison needs the Piola constraint",
            "n_norm": n_norm,
            "E_norm": e_norm,
            "pass": None,
        }
    l2_ratio = e_norm / n_norm
    grad_ratio = _tensor_gradient_norm(s.E) / max(grad(parts.n).norm(), 1e-300)
    lap_E = laplacian(s.E).norm()
    ebb_lap = laplacian(parts.Ebb).norm()
    lap_ratio = lap_E / ebb_lap if ebb_lap > 0 else None

    # smallest C with lap_E (1 - C size) <= C ebb_lap
    lap_constant = lap_E / (ebb_lap + lap_E * size)
    denominator = 1.0 - constant * size
    lap_bound = constant * ebb_lap / denominator if denominator > 0 else float("inf")
    lap_pass = denominator > 0 and lap_E <= lap_bound
    ratios_pass = abs(l2_ratio - 1.0) <= ratio_tol and abs(grad_ratio - 1.0) <= ratio_tol
    return {
        "status": HodgeStatus.OK,
        "t": s.t,
        "l2_ratio": l2_ratio,
        "grad_ratio": grad_ratio,
        "lap_ratio": lap_ratio,
        "h2_size": size,
        "l2_constant": abs(l2_ratio - 1.0) / size,
        "grad_constant": abs(grad_ratio - 1.0) / size,
        "lap_constant": lap_constant,
        "lap_bound": lap_bound,
        "constant": constant,
        "pass": bool(lap_pass and ratios_pass),
    }


def hodge_summary(reports):
    """Fold per-snapshot Hodge reports; a snapshot that fails fails the whole run."""
    checked = [report for report in reports if report["pass"] is not None]
    constants = [report["lap_constant"] for report in checked if "lap_constant" in report]
    return {
        "snapshots": reports,
        "checked": len(checked),
        "max_lap_constant": max(constants) if constants else None,
        "pass": all(report["pass"] for report in checked),
    }


def _tensor_gradient_norm(E):
    r2 = E.grid.xi_mag**2
    return float(np.sqrt(E.grid.parseval_factor() * np.sum(r2 * np.abs(E.coeffs) ** 2)))


class Monitor:
    """
    Read-only per-snapshot monitor. Keeps the running supremum needed for
    H_tilde(t) = sup_{s<=t} (1+s)^(5/2) (H + 1/2 |grad u|^2 + 1/2 |grad E|^2).
    """

    def __init__(self, kappa):
        self.kappa = kappa
        self.h_tilde = 0.0

    def report(self, s):
        H = functional_H(s, self.kappa)
        weighted = (1.0 + s.t) ** 2.5 * (H + 0.5 * grad(s.u).norm_sq() + 0.5 * _tensor_gradient_norm(s.E) ** 2)
        self.h_tilde = max(self.h_tilde, weighted)
        return InvariantReport(
            t=s.t,
            det_dev=det_deviation(s.E),
            divFT=div_FT_norm(s.E),
            piola=piola_residual(s.E),
            energy=s.energy(),
            dissipation=s.dissipation(),
            G=lyapunov_G(s, self.kappa),
            H=H,
            kappa=self.kappa,
            H_tilde=self.h_tilde,
            commutator=curl_commutator_residual(s.E),
            u_l2=s.u.norm(),
            E_l2=s.E.norm(),
            h2_size=s.h2_size(),
        )

    def __call__(self, s):
        return self.report(s).as_row()


def _elapsed(rows):
    t = np.array([row["t"] for row in rows])
    return t - t[0]


def structural_constant(rows, dt, aliasing_tol, name):
    """Smallest C >= 0 with q(t) <= q(t0) + C (dt^2 + aliasing_tol) (t - t0) at every row."""
    q = np.array([row[name] for row in rows])
    elapsed = _elapsed(rows)
    later = elapsed > 0
    if not np.any(later):
        return 0.0
    scaled = (q[later] - q[0]) / ((dt**2 + aliasing_tol) * elapsed[later])
    return float(max(0.0, np.max(scaled)))


def structural_envelope(rows, refined_rows, dt, aliasing_tol=1e-10, factor=2.0, floor=1e-12):
    """
    Fit C in q(t) <= q(t0) + C (dt^2 + aliasing_tol) (t - t0) for det_dev, divFT
    and piola on a run at dt (`rows`) and on the same run at dt/2
    (`refined_rows`). A quantity passes when the two constants agree within
    `factor`. Constants below the one at which the refined drift reaches
    `floor` are resolved to that value.
    """
    duration = float(max(_elapsed(rows)[-1], _elapsed(refined_rows)[-1]))
    resolved = floor / (((dt / 2) ** 2 + aliasing_tol) * duration) if duration > 0 else 0.0
    results = {}
    for name in STRUCTURAL_QUANTITIES:
        series = np.array([row[name] for row in rows])
        coarse = structural_constant(rows, dt, aliasing_tol, name)
        fine = structural_constant(refined_rows, dt / 2, aliasing_tol, name)
        a, b = max(coarse, resolved), max(fine, resolved)
        ratio = a / b if b > 0 else 1.0
        results[name] = {
            "initial": float(series[0]),
            "max": float(np.max(series)),
            "C": coarse,
            "C_refined": fine,
            "ratio": ratio,
            "limit": float(series[0] + coarse * (dt**2 + aliasing_tol) * _elapsed(rows)[-1]),
            "pass": bool(1.0 / factor <= ratio <= factor),
        }
    return results


def lyapunov_monotone(rows, slack):
    """G non-increasing up to `slack` per unit time."""
    G = np.array([row["G"] for row in rows])
    t = np.array([row["t"] for row in rows])
    growth = G[1:] - np.minimum.accumulate(G)[:-1] - slack * (t[1:] - t[0])
    worst = float(np.max(growth)) if len(growth) else 0.0
    return {"max_excess": worst, "slack": slack, "pass": worst <= 0.0}
