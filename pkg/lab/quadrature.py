"""
Whole-space norms of linear solutions by radial quadrature in Fourier space.

For data whose transform is radial in each pair component,

    ||(d^alpha u, d^alpha n)(t)||^2 = A * int_0^R r^(d-1) r^(2 alpha) |G(t, r) w0(r)|^2 dr

with A the surface measure of the unit sphere (or the angular average of a
non-radial factor). The integrand oscillates like cos(r t) near the origin,
so panels there are kept narrower than a quarter period.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy import special, stats

from lab.exceptions import ContractViolation
from lab.semigroup import greens_batch
from lab.spectral import SpectralField

logger = logging.getLogger(__name__)

SPHERE_AREA = {2: 2 * np.pi, 3: 4 * np.pi}
DEFAULT_WINDOW = (1e2, 1e4)
MIN_FIT_SAMPLES = 8


@dataclass(frozen=True)
class SpectralProfile:
    """
    Radial transforms of the (u, n) pair. `angular`, when given, multiplies both
    components by a function of the unit direction (array of shape (d, M)).
    """

    u_hat: Callable
    n_hat: Callable
    c0: float = 0.0
    xi_floor: float = 0.1
    angular: Callable | None = None
    label: str = "custom"

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        return np.broadcast_to(self.u_hat(r), r.shape), np.broadcast_to(self.n_hat(r), r.shape)

    def sup_norm(self, r_max=10.0, samples=4001):
        u, n = self(np.linspace(0.0, r_max, samples))
        return float(max(np.max(np.abs(u)), np.max(np.abs(n))))

    def floor_minimum(self, samples=1001):
        u, n = self(np.linspace(0.0, self.xi_floor, samples))
        return float(min(np.min(np.abs(u)), np.min(np.abs(n))))

    def floor_certified(self, slack=0.05):
        if self.c0 <= 0:
            return True
        return self.floor_minimum() >= self.c0 * (1.0 - slack)


@dataclass(frozen=True)
class DecaySeries:
    times: np.ndarray
    norms: np.ndarray
    alpha: int = 0
    dim: int = 3
    mu: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        norms = np.asarray(self.norms, dtype=np.float64)
        if times.shape != norms.shape:
            raise ValueError("times and norms must have the same length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(norms <= 0):
            raise ValueError("norms must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "norms", norms)

    def rows(self):
        for t, norm in zip(self.times, self.norms):
            yield {"t": float(t), "norm": float(norm), "alpha": self.alpha, "d": self.dim, "mu": self.mu}


@dataclass
class QuadratureResult:
    norm: float
    error_estimate: float
    tail: float
    panels: int
    extra: dict = field(default_factory=dict)


@lru_cache(maxsize=8)
def _gauss_legendre(order):
    return legendre.leggauss(order)


def angular_factor(dim, angular=None, order=24):
    """Integral of |a|^2 over the unit sphere by a product Gauss-Legendre rule."""
    if angular is None:
        return SPHERE_AREA[dim]
    x, w = _gauss_legendre(order)
    phi = np.pi * (x + 1.0)
    phi_w = np.pi * w
    if dim == 2:
        directions = np.array([np.cos(phi), np.sin(phi)])
        return float(np.sum(phi_w * np.abs(angular(directions)) ** 2))
    cos_theta = x[:, None] * np.ones_like(phi)[None, :]
    sin_theta = np.sqrt(1.0 - cos_theta**2)
    directions = np.array(
        [sin_theta * np.cos(phi)[None, :], sin_theta * np.sin(phi)[None, :], cos_theta]
    ).reshape(3, -1)
    weights = (w[:, None] * phi_w[None, :]).ravel()
    return float(np.sum(weights * np.abs(angular(directions)) ** 2))


class RadialQuadrature:
    """
    Composite Gauss-Legendre rule with an order-n vs order-2n error estimate
    per panel and deterministic bisection of the panels that dominate it.
    """

    def __init__(
        self,
        dim=3,
        mu=1.0,
        order=16,
        rel_tol=1e-10,
        tail_tol=1e-12,
        cutoff=None,
        coarse_panels=32,
        max_refinements=40,
    ):
        if dim not in SPHERE_AREA:
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        if not mu > 0:
            raise ValueError(f"mu must be positive, got {mu}")
        self.dim = dim
        self.mu = mu
        self.order = order
        self.rel_tol = rel_tol
        self.tail_tol = tail_tol
        self.cutoff = cutoff
        self.coarse_panels = coarse_panels
        self.max_refinements = max_refinements
        self.low_nodes, self.low_weights = _gauss_legendre(order)
        self.high_nodes, self.high_weights = _gauss_legendre(2 * order)

    def integrand(self, profile, t, alpha):
        def f(r):
            u0, n0 = profile(r)
            w1, w2 = greens_batch(t, r, self.mu).apply((u0, n0))
            return r ** (self.dim - 1 + 2 * alpha) * (np.abs(w1) ** 2 + np.abs(w2) ** 2)

        return f

    def _panel_sums(self, f, a, b):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        low = f(mid[:, None] + half[:, None] * self.low_nodes[None, :]) @ self.low_weights * half
        high = f(mid[:, None] + half[:, None] * self.high_nodes[None, :]) @ self.high_weights * half
        return low, high

    def _initial_edges(self, t, cutoff):
        focus = cutoff if t == 0 else min(cutoff, 8.0 / np.sqrt(self.mu * t))
        width = focus / self.coarse_panels
        if t > 0:
            width = min(width, np.pi / (4.0 * t))
        edges = np.linspace(0.0, focus, int(np.ceil(focus / width)) + 1)
        if focus < cutoff:
            edges = np.concatenate([edges, np.linspace(focus, cutoff, self.coarse_panels + 1)[1:]])
        return edges

    def integrate(self, f, edges):
        a, b = edges[:-1], edges[1:]
        total, error = 0.0, 0.0
        for _ in range(self.max_refinements):
            low, high = self._panel_sums(f, a, b)
            panel_error = np.abs(high - low)
            total, error = float(np.sum(high)), float(np.sum(panel_error))
            budget = self.rel_tol * max(abs(total), 1e-300)
            if error <= budget:
                break
            split = panel_error > budget / len(a)
            if not np.any(split):
                break
            mid = 0.5 * (a + b)
            a = np.concatenate([a[~split], a[split], mid[split]])
            b = np.concatenate([b[~split], mid[split], b[split]])
            order = np.argsort(a, kind="stable")
            a, b = a[order], b[order]
        else:
            logger.warning(f"radial quadrature stopped at {len(a)} panels with error {error:.3e}")
        return total, error, len(a)

    def _tail(self, f, cutoff, total):
        near = self.integrate(f, np.linspace(cutoff, 2 * cutoff, self.coarse_panels + 1))[0]
        if near <= self.tail_tol * max(total, 1e-300):
            return near
        far = self.integrate(f, np.linspace(2 * cutoff, 4 * cutoff, self.coarse_panels + 1))[0]
        if far >= near:
            raise ContractViolation(
                f"profile is not square integrable: tail on [{cutoff:g}, {2 * cutoff:g}] is {near:.3e}, "
                f"on [{2 * cutoff:g}, {4 * cutoff:g}] it is {far:.3e}"
            )
        raise ContractViolation(
            f"cutoff R={cutoff:g} too small: tail estimate {near:.3e} exceeds {self.tail_tol:g} of {total:.3e}"
        )

    def norm(self, profile, t, alpha=0):
        cutoff = self.cutoff or 6.0 + alpha
        f = self.integrand(profile, t, alpha)
        total, error, panels = self.integrate(f, self._initial_edges(t, cutoff))
        tail = self._tail(f, cutoff, total)
        area = angular_factor(self.dim, profile.angular)
        squared = area * total
        return QuadratureResult(
            norm=float(np.sqrt(max(squared, 0.0))),
            error_estimate=area * error,
            tail=area * tail,
            panels=panels,
        )


def linear_l2_norm(profile, t, alpha_weight=0, mu=1.0, dim=3, quadrature=None):
    quadrature = quadrature or RadialQuadrature(dim=dim, mu=mu)
    return quadrature.norm(profile, t, alpha_weight).norm


def decay_series(profile, times, alpha=0, mu=1.0, dim=3, quadrature=None):
    quadrature = quadrature or RadialQuadrature(dim=dim, mu=mu)
    norms = [quadrature.norm(profile, t, alpha).norm for t in times]
    logger.info(f"decay series: {len(norms)} samples, alpha={alpha}, d={dim}, mu={mu}")
    return DecaySeries(times=np.asarray(times), norms=np.asarray(norms), alpha=alpha, dim=dim, mu=mu)


def log_times(t_lo, t_hi, count):
    return np.geomspace(t_lo, t_hi, count)


def fit_decay_exponent(series, window=DEFAULT_WINDOW):
    """Least-squares slope of log(norm) against log(1 + t) inside the window."""
    t_lo, t_hi = window
    inside = (series.times >= t_lo) & (series.times <= t_hi)
    if np.count_nonzero(inside) < MIN_FIT_SAMPLES:
        raise ContractViolation(
            f"window [{t_lo:g}, {t_hi:g}] holds {np.count_nonzero(inside)} samples, "
            f"at least {MIN_FIT_SAMPLES} are needed"
        )
    fit = stats.linregress(np.log1p(series.times[inside]), np.log(series.norms[inside]))
    return float(fit.slope), float(fit.stderr)


def _passes(m, rho):
    return float(np.min(m)) >= rho * float(np.max(m))


def lower_bound_certificate(profile, times, rho=0.2, t0=None, mu=1.0, dim=3, quadrature=None, series=None):
    """
    Certify min m >= rho max m for m(t) = (1 + t)^(d/4) ||(u, n)(t)|| on [t0, T].
    `series` may carry precomputed norms for `times`.
    """
    if not profile.c0 > 0:
        logger.warning("lower bound requested for a profile without a low-frequency floor")
    times = np.asarray(times, dtype=np.float64)
    if series is None:
        series = decay_series(profile, times, 0, mu, dim, quadrature)
    t0 = float(times[0]) if t0 is None else t0
    keep = series.times >= t0
    t = series.times[keep]
    m = (1.0 + t) ** (dim / 4.0) * series.norms[keep]
    if len(m) == 0:
        raise ContractViolation(f"no samples at or after t0={t0:g}")

    min_m, max_m = float(np.min(m)), float(np.max(m))
    passed = len(m) == 1 or _passes(m, rho)
    earliest = next((float(t[k]) for k in range(len(t)) if _passes(m[k:], rho)), None)
    turning = np.diff(np.sign(np.diff(m))) if len(m) > 2 else np.array([])
    report = {
        "rho": rho,
        "t0": float(t[0]),
        "T": float(t[-1]),
        "min_m": min_m,
        "max_m": max_m,
        "pass": bool(passed),
        "violating_time": None if passed else float(t[np.argmin(m)]),
        "margin": min_m - rho * max_m,
        "earliest_passing_time": earliest,
        "oscillation": {
            "relative_amplitude": (max_m - min_m) / float(np.mean(m)),
            "local_extrema": int(np.count_nonzero(turning)),
        },
    }
    logger.info(f"lower bound certificate: pass={passed}, min/max={min_m / max_m:.4f}")
    return report


def lp_proxy_slope(slope_l2, slope_grad, p, dim=3):
    """Interpolate the L^p rate between the L^2 and gradient rates (Gagliardo-Nirenberg)."""
    if p < 2:
        raise ContractViolation(f"p must be >= 2, got {p}")
    a = min(dim * (0.5 - (0.0 if np.isinf(p) else 1.0 / p)), 1.0)
    return (1.0 - a) * slope_l2 + a * slope_grad


def sample_profile(profile, grid, component="u"):
    """
    Periodize a whole-space transform onto the grid:
    f_k = N^d (2 pi)^(d/2) w(xi_k) / L^d, so that SpectralField.norm approximates the
    continuum L2 norm by a Riemann sum with spacing 2 pi / L.
    """
    r = grid.xi_mag
    u, n = profile(r)
    values = u if component == "u" else n
    if profile.angular is not None:
        unit = grid.wavevectors / grid.xi_mag_safe
        values = values * profile.angular(unit.reshape(grid.dim, -1)).reshape(grid.shape)
    scale = grid.points_per_axis**grid.dim * (2 * np.pi) ** (grid.dim / 2) / grid.volume
    return SpectralField(grid, 0, scale * values)


def _composite_rule(upper, panels, order):
    """Nodes and weights of a composite Gauss-Legendre rule on [0, upper]."""
    x, w = _gauss_legendre(order)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return (mid[:, None] + half[:, None] * x[None, :]).ravel(), (half[:, None] * w[None, :]).ravel()


def _spherical_average(s, dim):
    """Integral of exp(i s e.w) over the unit sphere, as a function of s >= 0."""
    if dim == 2:
        return 2 * np.pi * special.j0(s)
    return 4 * np.pi * np.sinc(s / np.pi)


def physical_l1_norm(radial, dim, r_max=12.0, rho_max=24.0, panels=64, order=16):
    """
    L1 norm of the function whose (unitary) Fourier transform is the radial
    `radial`: f(rho) = (2 pi)^(-d/2) int r^(d-1) radial(r) A_d(r rho) dr, then
    |S^(d-1)| int rho^(d-1) |f(rho)| d rho.
    """
    r, r_weights = _composite_rule(r_max, panels, order)
    rho, rho_weights = _composite_rule(rho_max, panels, order)
    values = np.asarray(radial(r), dtype=np.float64) * r ** (dim - 1) * r_weights
    f = (2 * np.pi) ** (-dim / 2) * (_spherical_average(np.outer(rho, r), dim) @ values)
    return float(SPHERE_AREA[dim] * np.sum(rho_weights * rho ** (dim - 1) * np.abs(f)))


def profile_size(profile, dim, quadrature=None):
    """
    Size M = ||u0||_L1 + ||n0||_L1 + ||(u0, n0)||_H2 of the data behind a profile.
    The L1 parts are left out (None) for non-radial profiles.
    """
    quadrature = quadrature or RadialQuadrature(dim=dim)
    h2 = float(np.sqrt(sum(quadrature.norm(profile, 0.0, alpha).norm ** 2 for alpha in range(3))))
    if profile.angular is None:
        u_l1 = physical_l1_norm(profile.u_hat, dim)
        n_l1 = physical_l1_norm(profile.n_hat, dim)
    else:
        u_l1 = n_l1 = None
    total = h2 + u_l1 + n_l1 if u_l1 is not None else None
    return {"u_l1": u_l1, "n_l1": n_l1, "h2": h2, "M": total}


def plancherel_check(profile, grid, quadrature=None):
    """Relative gap between the sampled grid norm and the t = 0 quadrature norm."""
    quadrature = quadrature or RadialQuadrature(dim=grid.dim)
    sampled = np.hypot(sample_profile(profile, grid, "u").norm(), sample_profile(profile, grid, "n").norm())
    exact = quadrature.norm(profile, 0.0).norm
    return {"grid_norm": sampled, "quadrature_norm": exact, "relative_error": abs(sampled - exact) / exact}
