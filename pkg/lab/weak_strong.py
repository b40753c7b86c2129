"""
Relative energy between a strong trajectory (u, E) and a second trajectory
(u_w, E_w) standing in for a weak solution.

With U = u_w - u and D = E_w - E the relative energy 1/2 (|U|^2 + |D|^2)
is controlled by the remainders

    R1 = -int U_k d_k u_i U_i
    R2 = -int U_k d_k E_ij D_ij + int D_kj d_k u_i D_ij - int E_ij D_kj d_k U_i

and Gronwall closes with h = |grad u|_inf + |grad E|_inf + |E|_inf^2.
All integrals below are grid sums of products of three dealiased fields,
which are exact.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from lab.exceptions import GridMismatchError, MisalignedTrajectories, NonAdmissibleTrajectory
from lab.spectral import physical_gradient

logger = logging.getLogger(__name__)

ALIGNMENT_TOL = 1e-9


@dataclass
class RemainderTerms:
    R1: float
    R2: float
    R1_raw: float
    R2_raw: float
    constraint: float

    @property
    def discrepancy(self):
        """R2_raw - R2 - constraint; zero up to round-off."""
        return self.R2_raw - self.R2 - self.constraint


@dataclass
class RelativeEnergyReport:
    times: np.ndarray
    rel_energy: np.ndarray
    grad_diff: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    h: np.ndarray
    envelope: np.ndarray
    C_fit: float
    passed: bool
    same_data: bool
    tolerances: dict = field(default_factory=dict)
    constraint: np.ndarray | None = None

    def rows(self):
        for k, t in enumerate(self.times):
            yield {
                "t": float(t),
                "rel_energy": float(self.rel_energy[k]),
                "grad_diff": float(self.grad_diff[k]),
                "R1": float(self.R1[k]),
                "R2": float(self.R2[k]),
                "h": float(self.h[k]),
                "envelope": float(self.envelope[k]),
                "constraint": None if self.constraint is None else float(self.constraint[k]),
            }

    def summary(self):
        return {
            "C_fit": self.C_fit,
            "pass": self.passed,
            "same_data": self.same_data,
            "final_rel_energy": float(self.rel_energy[-1]),
            "tolerances": self.tolerances,
        }


def _fields(s):
    u = s.u.dealiased()
    E = s.E.dealiased()
    return u.physical(), physical_gradient(u), E.physical(), physical_gradient(E)


def _integral(values, grid):
    return float(np.sum(values) * grid.spacing**grid.dim)


def _check_pair(strong, weak):
    if strong.grid != weak.grid:
        raise GridMismatchError(f"trajectories live on different grids: {strong.grid} vs {weak.grid}")
    if abs(strong.t - weak.t) > ALIGNMENT_TOL * max(1.0, abs(strong.t)):
        raise MisalignedTrajectories(f"snapshot times differ: {strong.t!r} vs {weak.t!r}")


def remainders(strong, weak):
    _check_pair(strong, weak)
    grid = strong.grid
    u, grad_u, E, grad_E = _fields(strong)
    uw, grad_uw, Ew, grad_Ew = _fields(weak)
    U, grad_U = uw - u, grad_uw - grad_u
    D, grad_D = Ew - E, grad_Ew - grad_E

    R1 = -_integral(np.einsum("k...,ik...,i...->...", U, grad_u, U), grid)
    R1_raw = _integral(
        np.einsum("k...,ik...,i...->...", u, grad_u, uw) - np.einsum("i...,k...,ik...->...", uw, uw, grad_u),
        grid,
    )

    R2 = _integral(
        -np.einsum("k...,ijk...,ij...->...", U, grad_E, D)
        + np.einsum("kj...,ik...,ij...->...", D, grad_u, D)
        - np.einsum("ij...,kj...,ik...->...", E, D, grad_U),
        grid,
    )
    R2_raw = _integral(
        -np.einsum("kj...,ijk...,i...->...", E, grad_E, uw)
        + np.einsum("k...,ijk...,ij...->...", u, grad_E, Ew)
        - np.einsum("kj...,ik...,ij...->...", E, grad_u, Ew)
        + np.einsum("ij...,kj...,ik...->...", Ew, Ew, grad_u)
        - np.einsum("k...,ijk...,ij...->...", uw, grad_E, Ew)
        + np.einsum("kj...,ijk...,i...->...", Ew, grad_E, uw),
        grid,
    )
    divergence_D = np.einsum("kjk...->j...", grad_D)
    constraint = -_integral(np.einsum("i...,ij...,j...->...", uw, E, divergence_D), grid)
    return RemainderTerms(R1=R1, R2=R2, R1_raw=R1_raw, R2_raw=R2_raw, constraint=constraint)


def _sup_norm(values, rank):
    return float(np.sqrt(np.max(np.sum(values**2, axis=tuple(range(rank))))))


def h_coefficient(strong):
    _, grad_u, E, grad_E = _fields(strong)
    return _sup_norm(grad_u, 2) + _sup_norm(grad_E, 3) + _sup_norm(E, 2) ** 2


def relative_energy(strong, weak):
    _check_pair(strong, weak)
    return 0.5 * ((weak.u - strong.u).norm_sq() + (weak.E - strong.E).norm_sq())


def _cumulative_trapezoid(values, times):
    increments = 0.5 * np.diff(times) * (values[1:] + values[:-1])
    return np.concatenate([[0.0], np.cumsum(increments)])


def check_alignment(strong_states, weak_states):
    if len(strong_states) != len(weak_states):
        raise MisalignedTrajectories(
            f"trajectories have {len(strong_states)} and {len(weak_states)} snapshots"
        )
    for a, b in zip(strong_states, weak_states):
        if a.grid != b.grid:
            raise GridMismatchError(f"trajectories live on different grids: {a.grid} vs {b.grid}")
        if abs(a.t - b.t) > ALIGNMENT_TOL * max(1.0, abs(a.t)):
            raise MisalignedTrajectories(f"snapshot times differ: {a.t!r} vs {b.t!r}")


def check_admissible(states, label, tol_energy=1e-6):
    """
    Energy inequality E(t) + mu int |grad u|^2 <= E(0) (1 + tol) at every snapshot.
    The dissipation integral uses the smaller endpoint on each interval, a lower
    sum, so coarse snapshot spacing cannot produce a violation on its own.
    """
    times = np.array([s.t for s in states])
    energies = np.array([s.energy() for s in states])
    rates = np.array([s.dissipation() for s in states])
    spent = np.concatenate([[0.0], np.cumsum(np.diff(times) * np.minimum(rates[1:], rates[:-1]))])
    excess = energies + spent - energies[0] * (1.0 + tol_energy)
    worst = int(np.argmax(excess))
    if excess[worst] > 0:
        raise NonAdmissibleTrajectory(label, float(times[worst]), float(excess[worst]))
    return float(np.max(excess))


def gronwall_certificate(
    strong_states,
    weak_states,
    gronwall_slack=0.1,
    tol_energy=1e-6,
    same_data_factor=1e-6,
    same_data_tol=1e-14,
):
    """
    Fit the smallest C with
        |U|^2 + |D|^2 + mu int |grad U|^2 <= |U0|^2 + |D0|^2 + C int h (|U|^2 + |D|^2)
    at every snapshot, then check rel_energy(t) <= (1 + slack) rel_energy(0) exp(C int h).
    Pairs starting from the same data are instead held to same_data_factor * energy(0).
    """
    check_alignment(strong_states, weak_states)
    check_admissible(strong_states, "strong", tol_energy)
    check_admissible(weak_states, "weak", tol_energy)

    times = np.array([s.t for s in strong_states])
    mu = strong_states[0].mu
    rel = np.array([relative_energy(a, b) for a, b in zip(strong_states, weak_states)])
    grad_gap = np.array([mu * _grad_norm_sq(b.u - a.u) for a, b in zip(strong_states, weak_states)])
    grad_diff = _cumulative_trapezoid(grad_gap, times)
    h = np.array([h_coefficient(s) for s in strong_states])
    terms = [remainders(a, b) for a, b in zip(strong_states, weak_states)]

    h_integral = _cumulative_trapezoid(h, times)
    weighted = _cumulative_trapezoid(h * rel, times)
    growth = 2.0 * rel + grad_diff - 2.0 * rel[0]
    usable = weighted > 0
    C_fit = float(max(0.0, np.max(growth[usable] / (2.0 * weighted[usable])))) if np.any(usable) else 0.0
    envelope = rel[0] * np.exp(C_fit * h_integral)

    energy0 = strong_states[0].energy()
    same_data = rel[0] <= same_data_tol * max(energy0, 1e-300)
    if same_data:
        bound = same_data_factor * max(energy0, 1e-300)
        passed = bool(np.all(rel <= bound))
    else:
        passed = bool(np.all(rel <= (1.0 + gronwall_slack) * envelope))
    logger.info(f"relative energy certificate: C_fit={C_fit:.4g}, same_data={same_data}, pass={passed}")
    return RelativeEnergyReport(
        times=times,
        rel_energy=rel,
        grad_diff=grad_diff,
        R1=np.array([t.R1 for t in terms]),
        R2=np.array([t.R2 for t in terms]),
        h=h,
        envelope=envelope,
        C_fit=C_fit,
        passed=passed,
        same_data=bool(same_data),
        tolerances={
            "gronwall_slack": gronwall_slack,
            "tol_energy": tol_energy,
            "same_data_factor": same_data_factor,
        },
        constraint=np.array([t.constraint for t in terms]),
    )


def _grad_norm_sq(u):
    r2 = u.grid.xi_mag**2
    return float(u.grid.parseval_factor() * np.sum(r2 * np.abs(u.coeffs) ** 2))


def order_ratio(coarse_gap, fine_gap, bounds=(12.0, 20.0)):
    """Ratio of same-data gaps for (dt, dt/2) and (dt/2, dt/4); ~16 for a second-order scheme."""
    ratio = coarse_gap / fine_gap if fine_gap > 0 else float("inf")
    return {"ratio": ratio, "bounds": list(bounds), "pass": bool(bounds[0] <= ratio <= bounds[1])}
